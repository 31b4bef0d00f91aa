//! Train/evaluation splits for the four forecasting tasks and a synthetic
//! data generator with planted parameters.
//!
//! Every split keeps the full column layout. Cells are hidden from the
//! training mask and, where they are to be scored, set in `eval_mask`; the
//! original matrix remains the ground truth.

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::basis::bspline_basis;
use crate::error::{Error, Result};
use crate::metadata::{replicate_for_years, MetadataMatrix};
use crate::model::{eval_column, Dims, ModelParams, ModelSpec, Regression, RegressionParams};
use crate::profile::{reorganize, ProfileMatrix, RawSeries};
use crate::sparse::{CscMatrix, SparseVec};

/// Default share of series held out for cold- and warm-start splits.
pub const DEFAULT_HOLDOUT: f64 = 0.25;

/// Default share of training entries removed uniformly.
pub const DEFAULT_UNIFORM_REMOVAL: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    LongRange,
    ColdStart,
    WarmStart,
    Missing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    /// Original data under the training mask.
    pub train: ProfileMatrix,
    pub eval_mask: Array2<bool>,
    /// Series whose history is withheld (cold and warm start).
    pub test_series: Vec<String>,
}

impl Scenario {
    pub fn eval_count(&self) -> usize {
        self.eval_mask.iter().filter(|&&m| m).count()
    }

    /// Additionally hide a uniform share of the remaining training entries.
    pub fn with_uniform_removal(mut self, fraction: f64, seed: u64) -> Result<Self> {
        self.train = mask_uniform(&self.train, fraction, seed)?;
        Ok(self)
    }
}

/// Hide `round(fraction * |observed|)` observed entries chosen uniformly
/// without replacement.
pub fn mask_uniform(pm: &ProfileMatrix, fraction: f64, seed: u64) -> Result<ProfileMatrix> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidRange(format!("fraction {fraction} not in [0, 1)")));
    }
    let observed: Vec<(usize, usize)> = pm
        .mask()
        .indexed_iter()
        .filter(|(_, &m)| m)
        .map(|(c, _)| c)
        .collect();
    let amount = (fraction * observed.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = pm.mask().clone();
    for k in sample(&mut rng, observed.len(), amount) {
        mask[observed[k]] = false;
    }
    pm.with_mask(mask)
}

/// Hide each series' final year and score it. Single-year series stay in
/// training and are not scored.
pub fn split_long_range(pm: &ProfileMatrix) -> Result<Scenario> {
    let mut train = pm.mask().clone();
    let mut eval = Array2::from_elem(train.dim(), false);
    for span in pm.index().spans() {
        if span.n_years < 2 {
            log::warn!("series '{}' has a single year and is not part of the test set", span.id);
            continue;
        }
        let last = span.first_column + span.n_years - 1;
        for j in 0..pm.period() {
            eval[[j, last]] = train[[j, last]];
            train[[j, last]] = false;
        }
    }
    if !eval.iter().any(|&m| m) {
        return Err(Error::NothingToEvaluate("no series has more than one year".into()));
    }
    Ok(Scenario {
        kind: ScenarioKind::LongRange,
        train: pm.with_mask(train)?,
        eval_mask: eval,
        test_series: Vec::new(),
    })
}

/// Choose `round(fraction * n_series)` series to withhold, in index order.
pub fn choose_holdout(pm: &ProfileMatrix, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidRange(format!("holdout fraction {fraction} not in (0, 1)")));
    }
    let n = pm.index().n_series();
    let amount = (fraction * n as f64).round() as usize;
    if amount == 0 {
        return Err(Error::NothingToEvaluate(format!("holdout fraction {fraction} of {n} series is empty")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = sample(&mut rng, n, amount).into_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

fn split_heldout(pm: &ProfileMatrix, fraction: f64, prefix: usize, seed: u64, kind: ScenarioKind) -> Result<Scenario> {
    let t = pm.period();
    if prefix >= t {
        return Err(Error::NothingToEvaluate(format!("prefix {prefix} leaves nothing of period {t}")));
    }
    let chosen = choose_holdout(pm, fraction, seed)?;
    let mut train = pm.mask().clone();
    let mut eval = Array2::from_elem(train.dim(), false);
    let mut test_series = Vec::with_capacity(chosen.len());
    for s in chosen {
        let span = &pm.index().spans()[s];
        let last = span.first_column + span.n_years - 1;
        for c in span.columns() {
            for j in 0..t {
                if c == last && j >= prefix {
                    eval[[j, c]] = train[[j, c]];
                }
                if c != last || j >= prefix {
                    train[[j, c]] = false;
                }
            }
        }
        test_series.push(span.id.clone());
    }
    if !eval.iter().any(|&m| m) {
        return Err(Error::NothingToEvaluate("held-out series have no observations to score".into()));
    }
    Ok(Scenario {
        kind,
        train: pm.with_mask(train)?,
        eval_mask: eval,
        test_series,
    })
}

/// Withhold whole series; their final year is scored.
pub fn split_cold_start(pm: &ProfileMatrix, holdout_fraction: f64, seed: u64) -> Result<Scenario> {
    split_heldout(pm, holdout_fraction, 0, seed, ScenarioKind::ColdStart)
}

/// As [`split_cold_start`], but the first `prefix` rows of each held-out
/// series' final year stay visible; the remaining rows are scored.
pub fn split_warm_start(pm: &ProfileMatrix, holdout_fraction: f64, prefix: usize, seed: u64) -> Result<Scenario> {
    split_heldout(pm, holdout_fraction, prefix, seed, ScenarioKind::WarmStart)
}

/// Chunk length with mean `mean_len`, geometric on `{1, 2, ...}`.
pub fn sample_chunk_length<R: Rng + ?Sized>(rng: &mut R, mean_len: f64) -> usize {
    let p = (1.0 / mean_len).min(1.0);
    let geo = Geometric::new(p).expect("p in (0, 1]");
    geo.sample(rng) as usize + 1
}

/// Hide one contiguous chunk per column, starting at a uniform row with a
/// geometric length, clipped at the end of the column.
pub fn mask_contiguous(pm: &ProfileMatrix, mean_len: f64, seed: u64) -> Result<Scenario> {
    if !(mean_len > 0.0) {
        return Err(Error::InvalidRange(format!("mean chunk length {mean_len} must be positive")));
    }
    let t = pm.period();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = pm.mask().clone();
    let mut eval = Array2::from_elem(train.dim(), false);
    for c in 0..pm.n_columns() {
        let start = rng.random_range(0..t);
        let len = sample_chunk_length(&mut rng, mean_len);
        for j in start..(start.saturating_add(len)).min(t) {
            eval[[j, c]] = train[[j, c]];
            train[[j, c]] = false;
        }
    }
    if !eval.iter().any(|&m| m) {
        return Err(Error::NothingToEvaluate("chunks hit no observed cells".into()));
    }
    Ok(Scenario {
        kind: ScenarioKind::Missing,
        train: pm.with_mask(train)?,
        eval_mask: eval,
        test_series: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub period: usize,
    pub n_series: usize,
    pub years_per_series: usize,
    pub m: usize,
    /// Regression term of the generator.
    #[serde(flatten)]
    pub regression: Regression,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mf_rank: Option<usize>,
    pub noise_std: f64,
    /// Probability that a metadata entry is nonzero.
    pub density: f64,
    /// Smooth (B-spline) time factors instead of white Gaussian ones.
    pub smooth: bool,
    /// Standard deviation of the latent factors `R`.
    pub latent_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            period: 52,
            n_series: 100,
            years_per_series: 3,
            m: 50,
            regression: Regression::LowRank { rank: 4 },
            mf_rank: Some(3),
            noise_std: 0.0,
            density: 0.2,
            smooth: true,
            latent_scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub series: Vec<RawSeries>,
    pub pm: ProfileMatrix,
    /// One column per series.
    pub series_meta: MetadataMatrix,
    /// One column per year-column of `pm`.
    pub meta: MetadataMatrix,
    /// Generating parameters; `R` covers every column of `pm`.
    pub truth: ModelParams,
    /// Noiseless mean `f(phi_i) + L R_i + b` for every column.
    pub mean: Array2<f64>,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let normal = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_fn((rows, cols), |_| normal.sample(rng))
}

/// Time factors: white Gaussian, or random combinations of a cubic B-spline
/// basis when `smooth`. Each column has roughly unit scale.
fn time_factors(rng: &mut ChaCha8Rng, t: usize, k: usize, smooth: bool) -> Result<Array2<f64>> {
    if smooth {
        let basis = bspline_basis(t, (t / 6).clamp(1, 12))?.values;
        let mix = gaussian_matrix(rng, basis.ncols(), k, 1.5);
        Ok(basis.dot(&mix))
    } else {
        Ok(gaussian_matrix(rng, t, k, 1.0))
    }
}

/// Sample `Y_i = f(phi_i) + L R_i + b + noise` with known parameters.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    if cfg.n_series == 0 || cfg.years_per_series == 0 || cfg.m == 0 {
        return Err(Error::InvalidConfig("synthetic dims must be positive".into()));
    }
    if !(cfg.density > 0.0 && cfg.density <= 1.0) || !(cfg.noise_std >= 0.0) {
        return Err(Error::InvalidConfig("density must be in (0, 1] and noise_std >= 0".into()));
    }
    let t = cfg.period;
    let n = cfg.n_series * cfg.years_per_series;
    let m = cfg.m;
    let spec = ModelSpec::new(cfg.regression, cfg.mf_rank);
    let dims = Dims { t, n, m };
    let mut truth = ModelParams::zeros(spec, dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Spike-and-slab metadata, at least one active feature per series.
    let slab = Uniform::new(0.5, 1.5).expect("valid range");
    let mut phis = Vec::with_capacity(cfg.n_series);
    for _ in 0..cfg.n_series {
        let mut dense: Vec<f64> = (0..m)
            .map(|_| if rng.random_bool(cfg.density) { slab.sample(&mut rng) } else { 0.0 })
            .collect();
        if dense.iter().all(|&v| v == 0.0) {
            let i = rng.random_range(0..m);
            dense[i] = slab.sample(&mut rng);
        }
        phis.push(SparseVec::from_dense(&dense));
    }
    let feat_std = 1.0 / (cfg.density * m as f64 * (1.0 + 1.0 / 12.0)).sqrt();

    truth.regression = match (cfg.regression, &truth.regression) {
        (Regression::Full, _) => RegressionParams::Full {
            w: gaussian_matrix(&mut rng, t, m, feat_std),
        },
        (Regression::LowRank { rank }, _) => {
            let h = time_factors(&mut rng, t, rank, cfg.smooth)? / (rank as f64).sqrt();
            RegressionParams::LowRank {
                h,
                u: gaussian_matrix(&mut rng, rank, m, feat_std),
            }
        }
        (Regression::Functional { .. }, RegressionParams::Functional { basis, q }) => RegressionParams::Functional {
            basis: basis.clone(),
            q: gaussian_matrix(&mut rng, q.nrows(), m, feat_std),
        },
        (Regression::Neural { hidden }, _) => RegressionParams::Neural {
            w1: gaussian_matrix(&mut rng, hidden, m, feat_std),
            b1: Array1::from_iter((0..hidden).map(|_| rng.random_range(-0.5..0.5))),
            w2: gaussian_matrix(&mut rng, t, hidden, 1.0 / (hidden as f64).sqrt()),
            b2: Array1::zeros(t),
            w3: gaussian_matrix(&mut rng, t, t, 1.0 / (t as f64).sqrt()),
            b3: Array1::zeros(t),
        },
        _ => RegressionParams::None,
    };
    if let (Some(k), Some(mf)) = (cfg.mf_rank, truth.mf.as_mut()) {
        mf.l = time_factors(&mut rng, t, k, cfg.smooth)? / (k as f64).sqrt();
        mf.r = gaussian_matrix(&mut rng, k, n, cfg.latent_scale);
    }
    truth.bias = gaussian_matrix(&mut rng, t, 1, 0.25).column(0).to_owned();

    let labels: Vec<String> = (0..cfg.n_series).map(|s| format!("s{s:04}")).collect();
    let series_meta = MetadataMatrix::new(
        CscMatrix::from_columns(m, phis.iter().map(|p| p.view()))?,
        Vec::new(),
        labels.clone(),
    )?;

    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).expect("finite std");
    let mut mean = Array2::zeros((t, n));
    let mut series = Vec::with_capacity(cfg.n_series);
    for (s, id) in labels.iter().enumerate() {
        let mut values = Vec::with_capacity(t * cfg.years_per_series);
        for y in 0..cfg.years_per_series {
            let col = s * cfg.years_per_series + y;
            let mu = eval_column(&truth, &phis[s].view(), truth.latent(col))?;
            for &v in mu.iter() {
                let eps = if cfg.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                values.push(v + eps);
            }
            mean.column_mut(col).assign(&mu);
        }
        series.push(RawSeries::new(id.clone(), values));
    }
    let pm = reorganize(&series, t)?;
    let meta = replicate_for_years(&series_meta, pm.index())?;
    Ok(SyntheticData {
        series,
        pm,
        series_meta,
        meta,
        truth,
        mean,
    })
}
