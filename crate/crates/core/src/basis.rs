//! Clamped cubic B-spline basis on the sample grid `1..=T`.

use ndarray::Array2;

use crate::error::{Error, Result};

pub const DEGREE: usize = 3;

/// `T x (K + 3)` matrix of cubic B-spline values.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    pub values: Array2<f64>,
    /// Full clamped knot vector, endpoints repeated `DEGREE + 1` times.
    pub knots: Vec<f64>,
}

impl BasisMatrix {
    pub fn n_functions(&self) -> usize {
        self.values.ncols()
    }

    /// Knots strictly inside `(1, T)`.
    pub fn interior_knots(&self) -> &[f64] {
        &self.knots[DEGREE + 1..self.knots.len() - DEGREE - 1]
    }
}

/// Clamped knot vector splitting `[1, T]` into `spans` equal pieces.
pub fn clamped_uniform_knots(t: usize, spans: usize) -> Vec<f64> {
    let (lo, hi) = (1.0, t as f64);
    let mut knots = vec![lo; DEGREE + 1];
    knots.extend((1..spans).map(|i| lo + (hi - lo) * i as f64 / spans as f64));
    knots.extend(std::iter::repeat_n(hi, DEGREE + 1));
    knots
}

/// Cubic basis with `K + 3` functions for `K` uniform knot spans on `[1, T]`,
/// evaluated at `j = 1..=T`.
pub fn bspline_basis(t: usize, k: usize) -> Result<BasisMatrix> {
    if t < 4 {
        return Err(Error::InvalidBasis(format!("need T >= 4, got {t}")));
    }
    if k == 0 || k > t {
        return Err(Error::InvalidBasis(format!("need 1 <= K <= T, got K = {k}, T = {t}")));
    }
    let knots = clamped_uniform_knots(t, k);
    let n_funcs = knots.len() - DEGREE - 1;
    let mut values = Array2::zeros((t, n_funcs));
    for j in 0..t {
        let x = (j + 1) as f64;
        let span = find_span(&knots, n_funcs, x);
        let local = nonzero_basis(&knots, span, x);
        for (r, v) in local.iter().enumerate() {
            values[[j, span - DEGREE + r]] = *v;
        }
    }
    Ok(BasisMatrix { values, knots })
}

/// Index `s` with `knots[s] <= x < knots[s + 1]`, clamped to the last
/// non-degenerate span at the right end.
fn find_span(knots: &[f64], n_funcs: usize, x: f64) -> usize {
    if x >= knots[n_funcs] {
        return n_funcs - 1;
    }
    let mut lo = DEGREE;
    let mut hi = n_funcs;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if x < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// The `DEGREE + 1` functions that are nonzero on `span`, built by the
/// triangular de Boor scheme with left/right differences.
fn nonzero_basis(knots: &[f64], span: usize, x: f64) -> [f64; DEGREE + 1] {
    let mut n = [0.0; DEGREE + 1];
    let mut left = [0.0; DEGREE + 1];
    let mut right = [0.0; DEGREE + 1];
    n[0] = 1.0;
    for d in 1..=DEGREE {
        left[d] = x - knots[span + 1 - d];
        right[d] = knots[span + d] - x;
        let mut saved = 0.0;
        for r in 0..d {
            let tmp = n[r] / (right[r + 1] + left[d - r]);
            n[r] = saved + right[r + 1] * tmp;
            saved = left[d - r] * tmp;
        }
        n[d] = saved;
    }
    n
}
