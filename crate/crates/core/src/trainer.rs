//! Regularized least-squares objective and its minimization by mini-batch SGD.
//!
//! The objective is
//!
//! ```text
//! 1/(2N) sum_{(j,i) observed} (Y_ji - f(phi_i)_j - L_j . R_i - b_j)^2
//!     + lambda1/(2N) R_f + lambda2/(2N) (|L|_F^2 + |R|_F^2)
//! ```
//!
//! where `R_f` is the squared Frobenius norm of the regression weights
//! (`W`, `H` and `U`, or `Q`) and zero for the neural and empty regressions.
//! The bias is never penalized.

use std::time::Instant;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metadata::MetadataMatrix;
use crate::model::{backward, forward, init_params, Dims, ModelParams, ModelSpec, RegressionParams};
use crate::profile::ProfileMatrix;

/// Loss above which a restart is considered to have diverged.
pub const DIVERGENCE_LOSS: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Columns sampled uniformly with replacement, `minibatch` per step.
    #[default]
    Stochastic,
    /// Every column every step.
    FullBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub minibatch: usize,
    pub iterations: usize,
    pub step_size: f64,
    pub restarts: usize,
    pub seed: u64,
    pub mode: Mode,
    /// Record the full loss every this many steps; 0 picks `iterations / 100`.
    pub trace_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 1.0,
            lambda2: 1.0,
            minibatch: 300,
            iterations: 30_000,
            step_size: 1e-2,
            restarts: 1,
            seed: 0,
            mode: Mode::Stochastic,
            trace_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("regularization weights must be >= 0");
        }
        if self.minibatch == 0 || self.iterations == 0 || self.restarts == 0 {
            return bad("minibatch, iterations and restarts must be >= 1");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be positive");
        }
        Ok(())
    }

    fn trace_interval(&self) -> usize {
        if self.trace_every > 0 {
            self.trace_every
        } else {
            (self.iterations / 100).max(1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Smallest final loss over the restarts that finished.
    pub final_loss: f64,
    /// Trace of the winning restart (of the last one run, if all diverged).
    pub loss_trace: Vec<TracePoint>,
    /// Final loss of each restart, `None` where it diverged.
    pub restart_losses: Vec<Option<f64>>,
    pub best_restart: Option<usize>,
    pub wall_time: f64,
}

fn check_dims(params: &ModelParams, pm: &ProfileMatrix, meta: &MetadataMatrix) -> Result<()> {
    let Dims { t, n, m } = params.dims;
    if pm.period() != t || pm.n_columns() != n || meta.n_columns() != n || meta.dim() != m {
        return Err(Error::Shape(format!(
            "model expects T={t}, N={n}, m={m}; data has T={}, N={}, metadata {}x{}",
            pm.period(),
            pm.n_columns(),
            meta.dim(),
            meta.n_columns()
        )));
    }
    Ok(())
}

/// Problem dimensions implied by a data matrix and its metadata.
pub fn data_dims(pm: &ProfileMatrix, meta: &MetadataMatrix) -> Result<Dims> {
    if pm.n_columns() != meta.n_columns() {
        return Err(Error::Shape(format!(
            "{} data columns but {} metadata columns",
            pm.n_columns(),
            meta.n_columns()
        )));
    }
    Ok(Dims {
        t: pm.period(),
        n: pm.n_columns(),
        m: meta.dim(),
    })
}

/// Prediction for training column `i` together with the forward cache.
fn predict_column(params: &ModelParams, meta: &MetadataMatrix, i: usize) -> (crate::model::Forward, Array1<f64>) {
    let phi = meta.column(i);
    let fwd = forward(params, &phi);
    let mut pred = fwd.out.clone();
    if let Some(mf) = &params.mf {
        pred += &mf.l.dot(&mf.r.column(i));
    }
    pred += &params.bias;
    (fwd, pred)
}

/// Full regularized objective.
pub fn loss(params: &ModelParams, pm: &ProfileMatrix, meta: &MetadataMatrix, cfg: &TrainConfig) -> Result<f64> {
    check_dims(params, pm, meta)?;
    if pm.observed_count() == 0 {
        return Err(Error::NoObservations);
    }
    let n = params.dims.n as f64;
    let mut sse = 0.0;
    for i in 0..params.dims.n {
        let mask = pm.mask().column(i);
        if !mask.iter().any(|&m| m) {
            continue;
        }
        let (_, pred) = predict_column(params, meta, i);
        let y = pm.data().column(i);
        for j in 0..params.dims.t {
            if mask[j] {
                sse += (y[j] - pred[j]).powi(2);
            }
        }
    }
    Ok(sse / (2.0 * n)
        + cfg.lambda1 / (2.0 * n) * params.regression_penalty()
        + cfg.lambda2 / (2.0 * n) * params.mf_penalty())
}

/// Add the gradient of the batch-restricted objective into `grad` (which the
/// caller zeroes) and return the batch's sum of squared residuals.
fn accumulate_gradient(
    params: &ModelParams,
    pm: &ProfileMatrix,
    meta: &MetadataMatrix,
    cfg: &TrainConfig,
    batch: &[usize],
    grad: &mut ModelParams,
) -> f64 {
    let n = params.dims.n as f64;
    let mut sse = 0.0;
    for &i in batch {
        let mask = pm.mask().column(i);
        if !mask.iter().any(|&m| m) {
            continue;
        }
        let (fwd, pred) = predict_column(params, meta, i);
        let y = pm.data().column(i);
        let mut d_out = Array1::zeros(params.dims.t);
        for j in 0..params.dims.t {
            if mask[j] {
                let e = pred[j] - y[j];
                sse += e * e;
                d_out[j] = e / n;
            }
        }
        backward(params, &meta.column(i), &fwd, &d_out, grad);
        grad.bias += &d_out;
        if let (Some(mf), Some(gmf)) = (&params.mf, &mut grad.mf) {
            let r_i = mf.r.column(i);
            for (mut row, &d) in gmf.l.rows_mut().into_iter().zip(&d_out) {
                if d != 0.0 {
                    row.scaled_add(d, &r_i);
                }
            }
            let d_r = mf.l.t().dot(&d_out);
            gmf.r.column_mut(i).scaled_add(1.0, &d_r);
        }
    }

    let c1 = cfg.lambda1 / n;
    if c1 != 0.0 {
        match (&params.regression, &mut grad.regression) {
            (RegressionParams::Full { w }, RegressionParams::Full { w: gw }) => gw.scaled_add(c1, w),
            (RegressionParams::LowRank { h, u }, RegressionParams::LowRank { h: gh, u: gu }) => {
                gh.scaled_add(c1, h);
                gu.scaled_add(c1, u);
            }
            (RegressionParams::Functional { q, .. }, RegressionParams::Functional { q: gq, .. }) => gq.scaled_add(c1, q),
            _ => {}
        }
    }
    let c2 = cfg.lambda2 / n;
    if c2 != 0.0 {
        if let (Some(mf), Some(gmf)) = (&params.mf, &mut grad.mf) {
            gmf.l.scaled_add(c2, &mf.l);
            gmf.r.scaled_add(c2, &mf.r);
        }
    }
    sse
}

/// Exact gradient of the objective restricted to the residuals of `batch`
/// (a list of column indices, duplicates counted), with the regularization
/// terms at full strength.
pub fn gradient(
    params: &ModelParams,
    pm: &ProfileMatrix,
    meta: &MetadataMatrix,
    cfg: &TrainConfig,
    batch: &[usize],
) -> Result<ModelParams> {
    check_dims(params, pm, meta)?;
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    if let Some(&bad) = batch.iter().find(|&&i| i >= params.dims.n) {
        return Err(Error::Shape(format!("batch column {bad} out of range")));
    }
    let mut grad = params.zeros_like();
    accumulate_gradient(params, pm, meta, cfg, batch, &mut grad);
    Ok(grad)
}

/// Well-mixed seed for restart `index` derived from a root seed.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    let mut z = root.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct RestartOutcome {
    params: ModelParams,
    trace: Vec<TracePoint>,
    final_loss: Option<f64>,
}

/// Run SGD from `params` for `cfg.iterations` steps.
fn descend(
    mut params: ModelParams,
    pm: &ProfileMatrix,
    meta: &MetadataMatrix,
    cfg: &TrainConfig,
    batch_seed: u64,
) -> Result<RestartOutcome> {
    let n = params.dims.n;
    let mut rng = ChaCha8Rng::seed_from_u64(batch_seed);
    let mut grad = params.zeros_like();
    let all: Vec<usize> = (0..n).collect();
    let mut batch = vec![0; cfg.minibatch];
    let interval = cfg.trace_interval();
    let mut trace = vec![TracePoint {
        iteration: 0,
        loss: loss(&params, pm, meta, cfg)?,
    }];

    let diverged = |l: f64| !l.is_finite() || l > DIVERGENCE_LOSS;
    for it in 1..=cfg.iterations {
        for (_, g) in grad.blocks_mut() {
            g.fill(0.0);
        }
        let cols: &[usize] = match cfg.mode {
            Mode::FullBatch => &all,
            Mode::Stochastic => {
                batch.iter_mut().for_each(|c| *c = rng.random_range(0..n));
                &batch
            }
        };
        let sse = accumulate_gradient(&params, pm, meta, cfg, cols, &mut grad);
        if !sse.is_finite() {
            trace.push(TracePoint {
                iteration: it,
                loss: f64::INFINITY,
            });
            return Ok(RestartOutcome {
                params,
                trace,
                final_loss: None,
            });
        }
        params.axpy(-cfg.step_size, &grad);
        if it % interval == 0 || it == cfg.iterations {
            let l = loss(&params, pm, meta, cfg)?;
            trace.push(TracePoint { iteration: it, loss: l });
            if diverged(l) {
                return Ok(RestartOutcome {
                    params,
                    trace,
                    final_loss: None,
                });
            }
        }
    }
    let final_loss = trace.last().map(|p| p.loss);
    Ok(RestartOutcome {
        params,
        trace,
        final_loss,
    })
}

/// Train `restarts` seeded initializations and keep the lowest final loss.
pub fn fit(
    spec: ModelSpec,
    pm: &ProfileMatrix,
    meta: &MetadataMatrix,
    cfg: &TrainConfig,
) -> Result<(ModelParams, FitReport)> {
    cfg.validate()?;
    let dims = data_dims(pm, meta)?;
    if pm.observed_count() == 0 {
        return Err(Error::NoObservations);
    }
    let start = Instant::now();
    let outcomes: Vec<Result<RestartOutcome>> = (0..cfg.restarts as u64)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(cfg.seed, r);
            let init = init_params(spec, dims, seed)?;
            descend(init, pm, meta, cfg, derive_seed(seed, u64::MAX))
        })
        .collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let restart_losses: Vec<Option<f64>> = outcomes.iter().map(|o| o.final_loss).collect();
    let best = restart_losses
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|l| (i, l)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    let wall_time = start.elapsed().as_secs_f64();

    let mut outcomes = outcomes;
    match best {
        Some(b) => {
            let diverged = restart_losses.iter().filter(|l| l.is_none()).count();
            if diverged > 0 {
                log::warn!("{diverged} of {} restarts diverged", cfg.restarts);
            }
            let winner = outcomes.swap_remove(b);
            let report = FitReport {
                final_loss: winner.final_loss.expect("winner finished"),
                loss_trace: winner.trace,
                restart_losses,
                best_restart: Some(b),
                wall_time,
            };
            Ok((winner.params, report))
        }
        None => {
            let last = outcomes.pop().expect("at least one restart");
            Err(Error::Divergence {
                step_size: cfg.step_size,
                report: Box::new(FitReport {
                    final_loss: f64::INFINITY,
                    loss_trace: last.trace,
                    restart_losses,
                    best_restart: None,
                    wall_time,
                }),
            })
        }
    }
}
