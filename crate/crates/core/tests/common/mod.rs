//! Independent reference implementations and random instance builders shared
//! by the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use seasonal_mf::metadata::MetadataMatrix;
use seasonal_mf::model::{init_params, Dims, ModelParams, ModelSpec, RegressionParams};
use seasonal_mf::profile::{ProfileMatrix, SeriesYearIndex};
use seasonal_mf::sparse::{CscMatrix, SparseVec};

/// One B-spline function by the textbook recursion. On the closing knot the
/// last nonempty span is treated as closed.
pub fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64) -> f64 {
    if p == 0 {
        let (a, b) = (knots[i], knots[i + 1]);
        let end = *knots.last().unwrap();
        if a <= x && x < b {
            return 1.0;
        }
        // right end: the last span with positive width includes x
        if x == end && b == end && a < b {
            return 1.0;
        }
        return 0.0;
    }
    let mut v = 0.0;
    let d1 = knots[i + p] - knots[i];
    if d1 > 0.0 {
        v += (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x);
    }
    let d2 = knots[i + p + 1] - knots[i + 1];
    if d2 > 0.0 {
        v += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x);
    }
    v
}

/// Clamped cubic basis with `k` equal spans on `[1, t]`, sampled at `1..=t`.
pub fn basis_oracle(t: usize, k: usize) -> Array2<f64> {
    let mut knots = vec![1.0; 4];
    for i in 1..k {
        knots.push(1.0 + (t as f64 - 1.0) * i as f64 / k as f64);
    }
    knots.extend([t as f64; 4]);
    let n = knots.len() - 4;
    Array2::from_shape_fn((t, n), |(j, c)| cox_de_boor(&knots, c, 3, (j + 1) as f64))
}

fn dense_phi(meta: &MetadataMatrix, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; meta.dim()];
    for (idx, x) in meta.column(i).iter() {
        v[idx] = x;
    }
    v
}

fn matvec(a: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    (0..a.nrows())
        .map(|r| (0..a.ncols()).map(|c| a[[r, c]] * x[c]).sum())
        .collect()
}

/// Model mean of column `i` by explicit loops over dense arrays.
pub fn dense_predict(params: &ModelParams, meta: &MetadataMatrix, i: usize) -> Vec<f64> {
    let t = params.dims.t;
    let phi = dense_phi(meta, i);
    let mut out = match &params.regression {
        RegressionParams::Full { w } => matvec(w, &phi),
        RegressionParams::LowRank { h, u } => matvec(h, &matvec(u, &phi)),
        RegressionParams::Functional { q, .. } => {
            let b = basis_oracle(t, q.nrows() - 3);
            matvec(&b, &matvec(q, &phi))
        }
        RegressionParams::Neural { w1, b1, w2, b2, w3, b3 } => {
            let h1: Vec<f64> = matvec(w1, &phi).iter().zip(b1).map(|(a, b)| (a + b).max(0.0)).collect();
            let h2: Vec<f64> = matvec(w2, &h1).iter().zip(b2).map(|(a, b)| (a + b).max(0.0)).collect();
            matvec(w3, &h2).iter().zip(b3).map(|(a, b)| a + b).collect()
        }
        RegressionParams::None => vec![0.0; t],
    };
    if let Some(mf) = &params.mf {
        for j in 0..t {
            for a in 0..mf.l.ncols() {
                out[j] += mf.l[[j, a]] * mf.r[[a, i]];
            }
        }
    }
    for j in 0..t {
        out[j] += params.bias[j];
    }
    out
}

fn sq(a: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter().map(|v| v * v).sum()
}

/// The regularized objective written out term by term.
pub fn dense_loss(params: &ModelParams, pm: &ProfileMatrix, meta: &MetadataMatrix, l1: f64, l2: f64) -> f64 {
    let n = params.dims.n as f64;
    let mut sse = 0.0;
    for i in 0..params.dims.n {
        let pred = dense_predict(params, meta, i);
        for j in 0..params.dims.t {
            if pm.mask()[[j, i]] {
                sse += (pm.data()[[j, i]] - pred[j]).powi(2);
            }
        }
    }
    let rf = match &params.regression {
        RegressionParams::Full { w } => sq(w.iter().copied()),
        RegressionParams::LowRank { h, u } => sq(h.iter().copied()) + sq(u.iter().copied()),
        RegressionParams::Functional { q, .. } => sq(q.iter().copied()),
        _ => 0.0,
    };
    let rmf = params
        .mf
        .as_ref()
        .map_or(0.0, |mf| sq(mf.l.iter().copied()) + sq(mf.r.iter().copied()));
    sse / (2.0 * n) + l1 * rf / (2.0 * n) + l2 * rmf / (2.0 * n)
}

/// Thresholded per-column error averaged over scored columns; `None` when
/// no column has an entry to score.
pub fn apst_oracle(y: &Array2<f64>, y_hat: &Array2<f64>, mask: Option<&Array2<bool>>, rho: f64, mae: bool) -> Option<f64> {
    let mut per_col = Vec::new();
    for i in 0..y.ncols() {
        let errs: Vec<f64> = (0..y.nrows())
            .filter(|&j| mask.is_none_or(|m| m[[j, i]]) && y[[j, i]].abs() <= rho)
            .map(|j| {
                let e = y[[j, i]] - y_hat[[j, i]];
                if mae {
                    e.abs()
                } else {
                    e * e
                }
            })
            .collect();
        if !errs.is_empty() {
            per_col.push(errs.iter().sum::<f64>() / errs.len() as f64);
        }
    }
    (!per_col.is_empty()).then(|| per_col.iter().sum::<f64>() / per_col.len() as f64)
}

/// Metadata with the given dense columns.
pub fn meta_from_dense(cols: &[Vec<f64>]) -> MetadataMatrix {
    let dim = cols[0].len();
    let vs: Vec<SparseVec> = cols.iter().map(|c| SparseVec::from_dense(c)).collect();
    let csc = CscMatrix::from_columns(dim, vs.iter().map(|v| v.view())).unwrap();
    let labels = (0..cols.len()).map(|i| format!("s{i}")).collect();
    MetadataMatrix::new(csc, Vec::new(), labels).unwrap()
}

/// A random problem: `n` single-year series of period `t`, `m` features with
/// the given density, cells missing with probability `missing`, and random
/// parameters (bias included).
pub struct Instance {
    pub pm: ProfileMatrix,
    pub meta: MetadataMatrix,
    pub params: ModelParams,
}

pub fn random_instance(spec: ModelSpec, dims: Dims, density: f64, missing: f64, seed: u64) -> Instance {
    let Dims { t, n, m } = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..m)
                .map(|_| if rng.random_bool(density) { normal.sample(&mut rng) } else { 0.0 })
                .collect()
        })
        .collect();
    let meta = meta_from_dense(&cols);
    let index = SeriesYearIndex::new(t, (0..n).map(|i| (format!("s{i}"), 0, t))).unwrap();
    let mut mask = Array2::from_shape_fn((t, n), |_| !rng.random_bool(missing));
    mask[[0, 0]] = true;
    let data = Array2::from_shape_fn((t, n), |(j, i)| if mask[[j, i]] { normal.sample(&mut rng) } else { 0.0 });
    let pm = ProfileMatrix::new(data, mask, index).unwrap();
    let mut params = init_params(spec, dims, rng.random()).unwrap();
    for (name, block) in params.blocks_mut() {
        // larger weights keep neural pre-activations away from the kink
        let scale = if name == "b" { 0.5 } else { 0.6 };
        block.iter_mut().for_each(|v| *v = scale * normal.sample(&mut rng));
    }
    Instance { pm, meta, params }
}

pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
