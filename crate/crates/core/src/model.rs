//! Model family `Y_i = f(phi_i) + L R_i + b + noise`.
//!
//! `f` is one of several regressions from the metadata vector to a length-`T`
//! profile, and `L R_i` is an optional low-rank matrix-factorization term.

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::basis::bspline_basis;
use crate::error::{Error, Result};
use crate::sparse::SparseView;

/// Width of the first hidden layer of the neural regression.
pub const DEFAULT_HIDDEN: usize = 100;

/// Standard deviation of the Gaussian used by [`init_params`].
pub const INIT_STD: f64 = 0.1;

/// Regression component `f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Regression {
    /// `W phi` with a dense `T x m` weight matrix.
    Full,
    /// `H U phi` with `H: T x rank`, `U: rank x m`.
    LowRank { rank: usize },
    /// `B Q phi` with a fixed cubic B-spline basis `B` of `knots + 3` columns.
    Functional { knots: usize },
    /// Two ReLU hidden layers (`hidden`, then `T` units) and a linear output.
    Neural {
        #[serde(default = "default_hidden")]
        hidden: usize,
    },
    /// No regression; with MF enabled this is plain matrix factorization.
    None,
}

fn default_hidden() -> usize {
    DEFAULT_HIDDEN
}

impl Regression {
    pub fn name(&self) -> &'static str {
        match self {
            Regression::Full => "full",
            Regression::LowRank { .. } => "low_rank",
            Regression::Functional { .. } => "functional",
            Regression::Neural { .. } => "neural",
            Regression::None => "none",
        }
    }

    /// Linear variants satisfy `f(a x + b y) = a f(x) + b f(y)`.
    pub fn is_linear(&self) -> bool {
        !matches!(self, Regression::Neural { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub regression: Regression,
    /// Rank `k'` of the MF term, `None` for regression-only models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mf_rank: Option<usize>,
}

impl ModelSpec {
    pub fn new(regression: Regression, mf_rank: Option<usize>) -> Self {
        ModelSpec { regression, mf_rank }
    }

    /// Matrix factorization without any regression term.
    pub fn mf_alone(rank: usize) -> Self {
        ModelSpec::new(Regression::None, Some(rank))
    }

    pub fn mf_enabled(&self) -> bool {
        self.mf_rank.is_some()
    }

    /// The same regression with the MF term removed.
    pub fn without_mf(&self) -> Self {
        ModelSpec::new(self.regression, None)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        match self.regression {
            Regression::LowRank { rank: 0 } => return bad("low-rank regression needs rank >= 1"),
            Regression::Functional { knots: 0 } => return bad("functional regression needs knots >= 1"),
            Regression::Neural { hidden: 0 } => return bad("neural regression needs hidden >= 1"),
            _ => {}
        }
        if self.mf_rank == Some(0) {
            return bad("mf_rank must be >= 1");
        }
        if self.regression == Regression::None && self.mf_rank.is_none() {
            return bad("a model needs a regression or an MF term");
        }
        Ok(())
    }
}

/// Problem dimensions: period `t`, column count `n`, feature dimension `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub t: usize,
    pub n: usize,
    pub m: usize,
}

/// Learned arrays of the regression term.
#[derive(Debug, Clone, PartialEq)]
pub enum RegressionParams {
    Full {
        w: Array2<f64>,
    },
    LowRank {
        h: Array2<f64>,
        u: Array2<f64>,
    },
    Functional {
        /// Fixed `T x (K + 3)` basis, not trained.
        basis: Array2<f64>,
        q: Array2<f64>,
    },
    Neural {
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
        w3: Array2<f64>,
        b3: Array1<f64>,
    },
    None,
}

/// Latent time series `L: T x k'` and per-column factors `R: k' x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct MfParams {
    pub l: Array2<f64>,
    pub r: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub dims: Dims,
    pub regression: RegressionParams,
    pub mf: Option<MfParams>,
    pub bias: Array1<f64>,
}

/// Name, shape and contiguous data of one trainable array.
pub struct Block<'a> {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

impl ModelParams {
    /// All-zero parameters for `spec` and `dims`.
    pub fn zeros(spec: ModelSpec, dims: Dims) -> Result<Self> {
        spec.validate()?;
        let Dims { t, n, m } = dims;
        let regression = match spec.regression {
            Regression::Full => RegressionParams::Full {
                w: Array2::zeros((t, m)),
            },
            Regression::LowRank { rank } => RegressionParams::LowRank {
                h: Array2::zeros((t, rank)),
                u: Array2::zeros((rank, m)),
            },
            Regression::Functional { knots } => {
                let basis = bspline_basis(t, knots)?.values;
                let q = Array2::zeros((basis.ncols(), m));
                RegressionParams::Functional { basis, q }
            }
            Regression::Neural { hidden } => RegressionParams::Neural {
                w1: Array2::zeros((hidden, m)),
                b1: Array1::zeros(hidden),
                w2: Array2::zeros((t, hidden)),
                b2: Array1::zeros(t),
                w3: Array2::zeros((t, t)),
                b3: Array1::zeros(t),
            },
            Regression::None => RegressionParams::None,
        };
        let mf = spec.mf_rank.map(|k| MfParams {
            l: Array2::zeros((t, k)),
            r: Array2::zeros((k, n)),
        });
        Ok(ModelParams {
            spec,
            dims,
            regression,
            mf,
            bias: Array1::zeros(t),
        })
    }

    /// Zero-valued parameters of the same shape, used as gradient storage.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for b in z.blocks_mut() {
            b.1.fill(0.0);
        }
        z
    }

    /// Trainable arrays in a fixed order. The functional basis is excluded.
    pub fn blocks(&self) -> Vec<Block<'_>> {
        fn b2<'a>(name: &'static str, a: &'a Array2<f64>) -> Block<'a> {
            Block {
                name,
                shape: a.shape().to_vec(),
                data: a.as_slice().expect("standard layout"),
            }
        }
        fn b1<'a>(name: &'static str, a: &'a Array1<f64>) -> Block<'a> {
            Block {
                name,
                shape: a.shape().to_vec(),
                data: a.as_slice().expect("standard layout"),
            }
        }
        let mut out = Vec::new();
        match &self.regression {
            RegressionParams::Full { w } => out.push(b2("W", w)),
            RegressionParams::LowRank { h, u } => {
                out.push(b2("H", h));
                out.push(b2("U", u));
            }
            RegressionParams::Functional { q, .. } => out.push(b2("Q", q)),
            RegressionParams::Neural { w1, b1: c1, w2, b2: c2, w3, b3 } => {
                out.push(b2("W1", w1));
                out.push(b1("b1", c1));
                out.push(b2("W2", w2));
                out.push(b1("b2", c2));
                out.push(b2("W3", w3));
                out.push(b1("b3", b3));
            }
            RegressionParams::None => {}
        }
        if let Some(mf) = &self.mf {
            out.push(b2("L", &mf.l));
            out.push(b2("R", &mf.r));
        }
        out.push(b1("b", &self.bias));
        out
    }

    /// Mutable counterpart of [`Self::blocks`], same order.
    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        fn s2(a: &mut Array2<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        fn s1(a: &mut Array1<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        let mut out: Vec<(&'static str, &mut [f64])> = Vec::new();
        match &mut self.regression {
            RegressionParams::Full { w } => out.push(("W", s2(w))),
            RegressionParams::LowRank { h, u } => {
                out.push(("H", s2(h)));
                out.push(("U", s2(u)));
            }
            RegressionParams::Functional { q, .. } => out.push(("Q", s2(q))),
            RegressionParams::Neural { w1, b1, w2, b2, w3, b3 } => {
                out.push(("W1", s2(w1)));
                out.push(("b1", s1(b1)));
                out.push(("W2", s2(w2)));
                out.push(("b2", s1(b2)));
                out.push(("W3", s2(w3)));
                out.push(("b3", s1(b3)));
            }
            RegressionParams::None => {}
        }
        if let Some(mf) = &mut self.mf {
            out.push(("L", s2(&mut mf.l)));
            out.push(("R", s2(&mut mf.r)));
        }
        out.push(("b", s1(&mut self.bias)));
        out
    }

    /// `self += alpha * other`, block by block.
    pub fn axpy(&mut self, alpha: f64, other: &ModelParams) {
        let src = other.blocks();
        for ((_, dst), s) in self.blocks_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s.data) {
                *d += alpha * v;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.data.iter().all(|v| v.is_finite()))
    }

    /// Squared Frobenius norm of the regularized regression arrays.
    pub fn regression_penalty(&self) -> f64 {
        let sq = |a: &Array2<f64>| a.iter().map(|v| v * v).sum::<f64>();
        match &self.regression {
            RegressionParams::Full { w } => sq(w),
            RegressionParams::LowRank { h, u } => sq(h) + sq(u),
            RegressionParams::Functional { q, .. } => sq(q),
            RegressionParams::Neural { .. } | RegressionParams::None => 0.0,
        }
    }

    pub fn mf_penalty(&self) -> f64 {
        self.mf
            .as_ref()
            .map(|mf| mf.l.iter().chain(mf.r.iter()).map(|v| v * v).sum())
            .unwrap_or(0.0)
    }

    fn check_phi(&self, phi: &SparseView<'_>) -> Result<()> {
        if phi.dim != self.dims.m {
            return Err(Error::Shape(format!(
                "metadata vector has dim {} but the model expects {}",
                phi.dim, self.dims.m
            )));
        }
        Ok(())
    }

    /// Latent factor `R_i` of training column `i`, if MF is enabled.
    pub fn latent(&self, column: usize) -> Option<ArrayView1<'_, f64>> {
        self.mf.as_ref().map(|mf| mf.r.column(column))
    }
}

/// Intermediate values of one regression forward pass, kept for backprop.
pub(crate) struct Forward {
    pub out: Array1<f64>,
    /// `U phi` or `Q phi` for the factored linear variants.
    pub code: Option<Array1<f64>>,
    /// Post-activation hidden layers of the neural variant.
    pub hidden: Option<(Array1<f64>, Array1<f64>)>,
}

fn sparse_matvec(a: &Array2<f64>, phi: &SparseView<'_>) -> Array1<f64> {
    let mut out = Array1::zeros(a.nrows());
    for (idx, v) in phi.iter() {
        out.scaled_add(v, &a.column(idx));
    }
    out
}

fn relu(x: Array1<f64>) -> Array1<f64> {
    x.mapv_into(|v| v.max(0.0))
}

pub(crate) fn forward(params: &ModelParams, phi: &SparseView<'_>) -> Forward {
    let t = params.dims.t;
    match &params.regression {
        RegressionParams::Full { w } => Forward {
            out: sparse_matvec(w, phi),
            code: None,
            hidden: None,
        },
        RegressionParams::LowRank { h, u } => {
            let code = sparse_matvec(u, phi);
            Forward {
                out: h.dot(&code),
                code: Some(code),
                hidden: None,
            }
        }
        RegressionParams::Functional { basis, q } => {
            let code = sparse_matvec(q, phi);
            Forward {
                out: basis.dot(&code),
                code: Some(code),
                hidden: None,
            }
        }
        RegressionParams::Neural { w1, b1, w2, b2, w3, b3 } => {
            let h1 = relu(sparse_matvec(w1, phi) + b1);
            let h2 = relu(w2.dot(&h1) + b2);
            let out = w3.dot(&h2) + b3;
            Forward {
                out,
                code: None,
                hidden: Some((h1, h2)),
            }
        }
        RegressionParams::None => Forward {
            out: Array1::zeros(t),
            code: None,
            hidden: None,
        },
    }
}

/// Accumulate `d(loss)/d(theta)` into `grad` given `d(loss)/d(f(phi))`.
pub(crate) fn backward(
    params: &ModelParams,
    phi: &SparseView<'_>,
    fwd: &Forward,
    d_out: &Array1<f64>,
    grad: &mut ModelParams,
) {
    let add_outer_sparse = |g: &mut Array2<f64>, left: &Array1<f64>| {
        for (idx, v) in phi.iter() {
            g.column_mut(idx).scaled_add(v, left);
        }
    };
    match (&params.regression, &mut grad.regression) {
        (RegressionParams::Full { .. }, RegressionParams::Full { w: gw }) => add_outer_sparse(gw, d_out),
        (RegressionParams::LowRank { h, .. }, RegressionParams::LowRank { h: gh, u: gu }) => {
            let code = fwd.code.as_ref().expect("low-rank forward keeps its code");
            for (j, &d) in d_out.iter().enumerate() {
                if d != 0.0 {
                    gh.row_mut(j).scaled_add(d, code);
                }
            }
            let d_code = h.t().dot(d_out);
            add_outer_sparse(gu, &d_code);
        }
        (RegressionParams::Functional { basis, .. }, RegressionParams::Functional { q: gq, .. }) => {
            let d_code = basis.t().dot(d_out);
            add_outer_sparse(gq, &d_code);
        }
        (
            RegressionParams::Neural { w2, w3, .. },
            RegressionParams::Neural {
                w1: gw1,
                b1: gb1,
                w2: gw2,
                b2: gb2,
                w3: gw3,
                b3: gb3,
            },
        ) => {
            let (h1, h2) = fwd.hidden.as_ref().expect("neural forward keeps activations");
            *gb3 += d_out;
            outer_add(gw3, d_out, h2);
            let mut d_a2 = w3.t().dot(d_out);
            d_a2.zip_mut_with(h2, |d, &h| {
                if h <= 0.0 {
                    *d = 0.0
                }
            });
            *gb2 += &d_a2;
            outer_add(gw2, &d_a2, h1);
            let mut d_a1 = w2.t().dot(&d_a2);
            d_a1.zip_mut_with(h1, |d, &h| {
                if h <= 0.0 {
                    *d = 0.0
                }
            });
            *gb1 += &d_a1;
            add_outer_sparse(gw1, &d_a1);
        }
        (RegressionParams::None, RegressionParams::None) => {}
        _ => unreachable!("gradient storage must mirror the parameters"),
    }
}

fn outer_add(g: &mut Array2<f64>, left: &Array1<f64>, right: &Array1<f64>) {
    for (mut row, &l) in g.rows_mut().into_iter().zip(left) {
        if l != 0.0 {
            row.scaled_add(l, right);
        }
    }
}

/// Regression output `f(phi)`; zero for [`Regression::None`].
pub fn eval_regression(params: &ModelParams, phi: &SparseView<'_>) -> Result<Array1<f64>> {
    params.check_phi(phi)?;
    Ok(forward(params, phi).out)
}

/// Mean prediction `f(phi) + L r + b` for one column.
pub fn eval_column(params: &ModelParams, phi: &SparseView<'_>, r: Option<ArrayView1<'_, f64>>) -> Result<Array1<f64>> {
    let mut out = eval_regression(params, phi)?;
    match (&params.mf, r) {
        (Some(mf), Some(r)) => {
            if r.len() != mf.l.ncols() {
                return Err(Error::Shape(format!(
                    "latent factor has length {} but rank is {}",
                    r.len(),
                    mf.l.ncols()
                )));
            }
            out += &mf.l.dot(&r);
        }
        (None, None) => {}
        (Some(_), None) => return Err(Error::Shape("MF model needs a latent factor".into())),
        (None, Some(_)) => return Err(Error::Shape("latent factor given to a model without MF".into())),
    }
    out += &params.bias;
    Ok(out)
}

/// Gaussian `N(0, INIT_STD^2)` factors and zero bias, deterministic in `seed`.
pub fn init_params(spec: ModelSpec, dims: Dims, seed: u64) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(spec, dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    for (name, data) in params.blocks_mut() {
        if name == "b" {
            continue;
        }
        data.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::SparseVec;
    use ndarray::array;

    fn dims() -> Dims {
        Dims { t: 5, n: 4, m: 6 }
    }

    #[test]
    fn low_rank_hand_example() {
        let mut p = ModelParams::zeros(ModelSpec::new(Regression::LowRank { rank: 1 }, None), Dims { t: 3, n: 1, m: 2 }).unwrap();
        p.regression = RegressionParams::LowRank {
            h: array![[1.0], [2.0], [3.0]],
            u: array![[1.0, 0.0]],
        };
        let phi = SparseVec::from_dense(&[5.0, 9.0]);
        assert_eq!(eval_regression(&p, &phi.view()).unwrap(), array![5.0, 10.0, 15.0]);
    }

    #[test]
    fn zero_phi_gives_zero_for_linear_variants() {
        for reg in [Regression::Full, Regression::LowRank { rank: 2 }, Regression::Functional { knots: 2 }] {
            let p = init_params(ModelSpec::new(reg, None), dims(), 3).unwrap();
            let out = eval_regression(&p, &SparseVec::zeros(6).view()).unwrap();
            assert!(out.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn neural_with_zero_weights_outputs_b3() {
        let mut p = ModelParams::zeros(ModelSpec::new(Regression::Neural { hidden: 4 }, None), dims()).unwrap();
        if let RegressionParams::Neural { b3, .. } = &mut p.regression {
            *b3 = array![1.0, -2.0, 3.0, 0.5, 0.0];
        }
        let phi = SparseVec::from_dense(&[1.0, 0.0, 2.0, 0.0, 0.0, 3.0]);
        assert_eq!(eval_regression(&p, &phi.view()).unwrap(), array![1.0, -2.0, 3.0, 0.5, 0.0]);
    }

    #[test]
    fn none_variant_is_zero() {
        let p = init_params(ModelSpec::mf_alone(2), dims(), 1).unwrap();
        let phi = SparseVec::from_dense(&[1.0; 6]);
        assert_eq!(eval_regression(&p, &phi.view()).unwrap(), Array1::<f64>::zeros(5));
    }

    #[test]
    fn eval_column_selects_l_column() {
        let mut p = ModelParams::zeros(ModelSpec::mf_alone(2), dims()).unwrap();
        let l = array![[1.0, 6.0], [2.0, 7.0], [3.0, 8.0], [4.0, 9.0], [5.0, 10.0]];
        p.mf.as_mut().unwrap().l = l.clone();
        let r = array![1.0, 0.0];
        let out = eval_column(&p, &SparseVec::zeros(6).view(), Some(r.view())).unwrap();
        assert_eq!(out, l.column(0));
    }

    #[test]
    fn eval_column_without_mf_adds_bias() {
        let mut p = init_params(ModelSpec::new(Regression::Full, None), dims(), 9).unwrap();
        p.bias = array![1.0, 2.0, 3.0, 4.0, 5.0];
        let phi = SparseVec::from_dense(&[0.5, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let f = eval_regression(&p, &phi.view()).unwrap();
        assert_eq!(eval_column(&p, &phi.view(), None).unwrap(), f + &p.bias);
    }

    #[test]
    fn latent_presence_must_match_spec() {
        let p = init_params(ModelSpec::mf_alone(2), dims(), 1).unwrap();
        assert!(eval_column(&p, &SparseVec::zeros(6).view(), None).is_err());
        let q = init_params(ModelSpec::new(Regression::Full, None), dims(), 1).unwrap();
        assert!(eval_column(&q, &SparseVec::zeros(6).view(), Some(array![1.0].view())).is_err());
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let p = init_params(ModelSpec::new(Regression::Full, None), dims(), 1).unwrap();
        assert!(matches!(eval_regression(&p, &SparseVec::zeros(3).view()), Err(Error::Shape(_))));
    }

    #[test]
    fn init_is_seeded() {
        let spec = ModelSpec::new(Regression::LowRank { rank: 2 }, Some(2));
        let a = init_params(spec, dims(), 7).unwrap();
        let b = init_params(spec, dims(), 7).unwrap();
        let c = init_params(spec, dims(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_scale() {
        let p = init_params(ModelSpec::new(Regression::Full, None), Dims { t: 100, n: 1, m: 200 }, 42).unwrap();
        let RegressionParams::Full { w } = &p.regression else { unreachable!() };
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 0.1).abs() < 0.02, "std {std}");
    }

    #[test]
    fn invalid_specs() {
        assert!(ModelSpec::new(Regression::None, None).validate().is_err());
        assert!(ModelSpec::new(Regression::LowRank { rank: 0 }, None).validate().is_err());
        assert!(ModelSpec::new(Regression::Full, Some(0)).validate().is_err());
    }

    #[test]
    fn spec_serde_roundtrip() {
        let spec = ModelSpec::new(Regression::Functional { knots: 8 }, Some(5));
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, r#"{"variant":"functional","knots":8,"mf_rank":5}"#);
        assert_eq!(serde_json::from_str::<ModelSpec>(&json).unwrap(), spec);
    }
}
