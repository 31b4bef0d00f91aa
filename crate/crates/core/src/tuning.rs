//! Hyperparameter selection by two-stage cross-validation.
//!
//! Stage one tunes `lambda1` (and the knot count of functional models) on the
//! model without its MF term. Stage two fixes those values and tunes `lambda2`
//! on the full model. Folds are sets of columns: all observed entries of a
//! fold's columns are hidden while training and scored afterwards.

use std::io::Write;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metadata::MetadataMatrix;
use crate::metrics::{apst, MetricConfig, MetricKind};
use crate::model::{ModelSpec, Regression};
use crate::predictor::forecast_cold;
use crate::profile::ProfileMatrix;
use crate::trainer::{derive_seed, fit, TrainConfig};

/// `n` values geometrically spaced from `lo` to `hi`, both included.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && lo < hi && hi.is_finite()) || n < 2 {
        return Err(Error::InvalidRange(format!("log grid ({lo}, {hi}, {n})")));
    }
    let ratio = hi / lo;
    Ok((0..n)
        .map(|i| match i {
            0 => lo,
            i if i == n - 1 => hi,
            i => lo * ratio.powf(i as f64 / (n - 1) as f64),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Folds {
    pub n_folds: usize,
    /// Fold of each column.
    pub assignment: Vec<usize>,
}

impl Folds {
    pub fn columns(&self, fold: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, &f)| f == fold)
            .map(|(c, _)| c)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_folds];
        for &f in &self.assignment {
            s[f] += 1;
        }
        s
    }
}

/// Shuffle the columns and deal them round-robin into `folds` folds.
pub fn kfold_columns(n: usize, folds: usize, seed: u64) -> Result<Folds> {
    if folds == 0 || folds > n {
        return Err(Error::TooManyFolds { folds, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (pos, &c) in order.iter().enumerate() {
        assignment[c] = pos % folds;
    }
    Ok(Folds {
        n_folds: folds,
        assignment,
    })
}

/// One validation fold holding `round(fraction * n)` random columns; the rest
/// of the columns are assigned to an unused fold index 1.
pub fn holdout_columns(n: usize, fraction: f64, seed: u64) -> Result<Folds> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidRange(format!("validation fraction {fraction}")));
    }
    let size = ((fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![1; n];
    for &c in &order[..size] {
        assignment[c] = 0;
    }
    Ok(Folds {
        n_folds: 2,
        assignment,
    })
}

/// Training view with fold `fold` hidden, and the mask of entries to score.
pub fn fold_split(pm: &ProfileMatrix, folds: &Folds, fold: usize) -> Result<(ProfileMatrix, Array2<bool>)> {
    let mut train = pm.mask().clone();
    let mut eval = Array2::from_elem(train.dim(), false);
    for c in folds.columns(fold) {
        for j in 0..pm.period() {
            eval[[j, c]] = train[[j, c]];
            train[[j, c]] = false;
        }
    }
    Ok((pm.with_mask(train)?, eval))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    /// Knot counts, used only by functional models.
    #[serde(default)]
    pub knots: Vec<usize>,
}

impl Grid {
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let positive = |v: &[f64]| v.iter().all(|&x| x > 0.0 && x.is_finite());
        if spec.regression != Regression::None && (self.lambda1.is_empty() || !positive(&self.lambda1)) {
            return Err(Error::InvalidConfig("lambda1 grid must be non-empty and positive".into()));
        }
        if spec.mf_enabled() && (self.lambda2.is_empty() || !positive(&self.lambda2)) {
            return Err(Error::InvalidConfig("lambda2 grid must be non-empty and positive".into()));
        }
        if matches!(spec.regression, Regression::Functional { .. }) && self.knots.contains(&0) {
            return Err(Error::InvalidConfig("knot counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CvMode {
    KFold { folds: usize },
    /// A single validation set of the given share of columns.
    Holdout { fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    #[serde(flatten)]
    pub mode: CvMode,
    #[serde(default)]
    pub seed: u64,
    /// Metric threshold; `None` is infinite.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            mode: CvMode::KFold { folds: 5 },
            seed: 0,
            rho: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub lambda1: f64,
    pub lambda2: Option<f64>,
    pub knots: Option<usize>,
    /// Validation APST_MSE per fold, `None` where training failed.
    pub fold_metrics: Vec<Option<f64>>,
    /// Mean over folds; `None` marks a failed candidate.
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chosen {
    pub lambda1: f64,
    pub lambda2: Option<f64>,
    pub knots: Option<usize>,
}

impl Chosen {
    /// Spec and config with the chosen values substituted.
    pub fn apply(&self, spec: ModelSpec, cfg: &TrainConfig) -> (ModelSpec, TrainConfig) {
        let mut spec = spec;
        if let (Regression::Functional { knots }, Some(k)) = (&mut spec.regression, self.knots) {
            *knots = k;
        }
        let mut cfg = *cfg;
        cfg.lambda1 = self.lambda1;
        if let Some(l2) = self.lambda2 {
            cfg.lambda2 = l2;
        }
        (spec, cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub stage1: Vec<CandidateResult>,
    pub stage2: Vec<CandidateResult>,
    pub chosen: Chosen,
    pub folds: Folds,
}

impl CvResult {
    /// Delimited report: `stage,candidate,lambda1,lambda2,knots,fold,metric,mean`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["stage", "candidate", "lambda1", "lambda2", "knots", "fold", "metric", "mean"])?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for (stage, cands) in [(1, &self.stage1), (2, &self.stage2)] {
            for (ci, c) in cands.iter().enumerate() {
                for (f, m) in c.fold_metrics.iter().enumerate() {
                    w.write_record([
                        stage.to_string(),
                        ci.to_string(),
                        format!("{:e}", c.lambda1),
                        fmt(c.lambda2),
                        c.knots.map(|k| k.to_string()).unwrap_or_default(),
                        f.to_string(),
                        fmt(*m),
                        fmt(c.mean),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Folds to evaluate for a CV mode.
fn validation_folds(mode: CvMode, n: usize, seed: u64) -> Result<(Folds, Vec<usize>)> {
    match mode {
        CvMode::KFold { folds } => {
            let f = kfold_columns(n, folds, seed)?;
            Ok((f, (0..folds).collect()))
        }
        CvMode::Holdout { fraction } => Ok((holdout_columns(n, fraction, seed)?, vec![0])),
    }
}

/// Validation APST_MSE of one candidate on one fold.
fn score_fold(
    spec: ModelSpec,
    cfg: &TrainConfig,
    pm: &ProfileMatrix,
    meta: &MetadataMatrix,
    folds: &Folds,
    fold: usize,
    rho: f64,
) -> Result<f64> {
    let (train, eval) = fold_split(pm, folds, fold)?;
    let (params, _) = fit(spec, &train, meta, cfg)?;
    let mut pred = Array2::zeros(pm.data().dim());
    for c in folds.columns(fold) {
        let phi = meta.column(c).to_owned();
        pred.column_mut(c).assign(&forecast_cold(&params, &phi)?);
    }
    let metric = MetricConfig::new(MetricKind::Mse, rho).with_mask(eval);
    Ok(apst(pm.data(), &pred, &metric)?.value)
}

fn evaluate_candidates(
    candidates: Vec<(ModelSpec, TrainConfig, CandidateResult)>,
    pm: &ProfileMatrix,
    meta: &MetadataMatrix,
    folds: &Folds,
    eval_folds: &[usize],
    rho: f64,
) -> Vec<CandidateResult> {
    let jobs: Vec<(usize, usize)> = (0..candidates.len())
        .flat_map(|c| eval_folds.iter().map(move |&f| (c, f)))
        .collect();
    let scores: Vec<Option<f64>> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let (spec, cfg, _) = &candidates[c];
            match score_fold(*spec, cfg, pm, meta, folds, f, rho) {
                Ok(v) if v.is_finite() => Some(v),
                Ok(_) => None,
                Err(e) => {
                    log::warn!("candidate {c} fold {f} failed: {e}");
                    None
                }
            }
        })
        .collect();
    candidates
        .into_iter()
        .enumerate()
        .map(|(c, (_, _, mut res))| {
            res.fold_metrics = scores[c * eval_folds.len()..(c + 1) * eval_folds.len()].to_vec();
            res.mean = res
                .fold_metrics
                .iter()
                .copied()
                .collect::<Option<Vec<f64>>>()
                .map(|v| v.iter().sum::<f64>() / v.len() as f64);
            res
        })
        .collect()
}

/// First candidate with the smallest mean; candidates are listed in ascending
/// regularization so ties go to the least regularized.
fn argmin(cands: &[CandidateResult]) -> Option<&CandidateResult> {
    let mut best: Option<&CandidateResult> = None;
    for c in cands {
        if let Some(m) = c.mean {
            if best.and_then(|b| b.mean).is_none_or(|bm| m < bm) {
                best = Some(c);
            }
        }
    }
    best
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

pub fn two_stage_cv(
    spec: ModelSpec,
    pm: &ProfileMatrix,
    meta: &MetadataMatrix,
    grid: &Grid,
    cfg: &TrainConfig,
    cv: &CvConfig,
) -> Result<CvResult> {
    spec.validate()?;
    grid.validate(&spec)?;
    let rho = cv.rho.unwrap_or(f64::INFINITY);
    let (folds, eval_folds) = validation_folds(cv.mode, pm.n_columns(), cv.seed)?;
    let fold_cfg = |base: &TrainConfig, idx: usize| TrainConfig {
        seed: derive_seed(cv.seed, idx as u64),
        ..*base
    };

    // Stage 1: regression-only model.
    let mut chosen = Chosen {
        lambda1: cfg.lambda1,
        lambda2: None,
        knots: match spec.regression {
            Regression::Functional { knots } => Some(knots),
            _ => None,
        },
    };
    let mut stage1 = Vec::new();
    if spec.regression != Regression::None {
        let knot_options: Vec<Option<usize>> = match spec.regression {
            Regression::Functional { knots } if grid.knots.is_empty() => vec![Some(knots)],
            Regression::Functional { .. } => {
                let mut k = grid.knots.clone();
                k.sort_unstable();
                k.dedup();
                k.into_iter().map(Some).collect()
            }
            _ => vec![None],
        };
        let mut cands = Vec::new();
        for &knots in &knot_options {
            for &l1 in &sorted(&grid.lambda1) {
                let choice = Chosen {
                    lambda1: l1,
                    lambda2: None,
                    knots,
                };
                let (s, c) = choice.apply(spec.without_mf(), cfg);
                let c = fold_cfg(&c, cands.len());
                cands.push((
                    s,
                    c,
                    CandidateResult {
                        lambda1: l1,
                        lambda2: None,
                        knots,
                        fold_metrics: Vec::new(),
                        mean: None,
                    },
                ));
            }
        }
        stage1 = evaluate_candidates(cands, pm, meta, &folds, &eval_folds, rho);
        let best = argmin(&stage1)
            .ok_or_else(|| Error::InvalidConfig("every stage-1 candidate failed".into()))?;
        chosen.lambda1 = best.lambda1;
        chosen.knots = best.knots;
    }

    // Stage 2: full model with stage-1 values fixed.
    let mut stage2 = Vec::new();
    if spec.mf_enabled() {
        let mut cands = Vec::new();
        for &l2 in &sorted(&grid.lambda2) {
            let choice = Chosen {
                lambda2: Some(l2),
                ..chosen
            };
            let (s, c) = choice.apply(spec, cfg);
            let c = fold_cfg(&c, 10_000 + cands.len());
            cands.push((
                s,
                c,
                CandidateResult {
                    lambda1: chosen.lambda1,
                    lambda2: Some(l2),
                    knots: chosen.knots,
                    fold_metrics: Vec::new(),
                    mean: None,
                },
            ));
        }
        stage2 = evaluate_candidates(cands, pm, meta, &folds, &eval_folds, rho);
        let best = argmin(&stage2)
            .ok_or_else(|| Error::InvalidConfig("every stage-2 candidate failed".into()))?;
        chosen.lambda2 = best.lambda2;
    }

    Ok(CvResult {
        stage1,
        stage2,
        chosen,
        folds,
    })
}
