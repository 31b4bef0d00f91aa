//! Glue between on-disk artifacts and the library: splits, forecasts over
//! whole series, and evaluation of forecast rows against a truth matrix.

use std::collections::HashSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::baselines::{avg_py, knn_forecast, AvgProfile, KnnWeighting, DEFAULT_K};
use crate::error::{Error, Result};
use crate::io::ForecastRow;
use crate::metadata::MetadataMatrix;
use crate::metrics::{apst, MetricConfig, MetricKind, MetricReport};
use crate::model::ModelParams;
use crate::predictor::{forecast_cold, forecast_warm, predict_column, WarmObservations};
use crate::profile::{ProfileMatrix, StandardizationStats};
use crate::scenarios::{
    mask_contiguous, split_cold_start, split_long_range, split_warm_start, Scenario, ScenarioKind, DEFAULT_HOLDOUT,
};
use crate::sparse::{CscMatrix, SparseVec};

/// Split parameters; `None` picks the default for the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<f64>,
    /// Visible rows of each warm-start test year; default `T / 6`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefix: Option<usize>,
    /// Mean missing-chunk length; default `T / 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_len: Option<f64>,
    /// Share of the remaining training entries hidden after the split.
    #[serde(default)]
    pub uniform_removal: f64,
}

/// Record of a split, written next to its containers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub options: SplitOptions,
    pub test_series: Vec<String>,
    pub train_observed: usize,
    pub eval_count: usize,
}

pub fn make_split(pm: &ProfileMatrix, kind: ScenarioKind, opts: &SplitOptions, seed: u64) -> Result<Scenario> {
    let t = pm.period();
    let holdout = opts.holdout.unwrap_or(DEFAULT_HOLDOUT);
    let scenario = match kind {
        ScenarioKind::LongRange => split_long_range(pm)?,
        ScenarioKind::ColdStart => split_cold_start(pm, holdout, seed)?,
        ScenarioKind::WarmStart => split_warm_start(pm, holdout, opts.prefix.unwrap_or((t / 6).max(1)), seed)?,
        ScenarioKind::Missing => mask_contiguous(pm, opts.mean_len.unwrap_or(t as f64 / 2.0), seed)?,
    };
    if opts.uniform_removal > 0.0 {
        scenario.with_uniform_removal(opts.uniform_removal, crate::trainer::derive_seed(seed, 1))
    } else {
        Ok(scenario)
    }
}

/// Training matrix with hidden cells zeroed, so nothing withheld is written
/// to disk.
pub fn scrub(pm: &ProfileMatrix) -> Result<ProfileMatrix> {
    let data = Array2::from_shape_fn(pm.data().dim(), |(j, i)| if pm.mask()[[j, i]] { pm.data()[[j, i]] } else { 0.0 });
    pm.with_data(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastMode {
    /// `f(phi) + b`.
    Cold,
    /// Latent factor fitted to the column's observed cells.
    Warm,
    /// Learned latent factor of each column.
    Impute,
    /// Per-row average over the series' observed years.
    Avg,
    /// k-nearest-neighbour average of other series' profiles.
    Knn,
}

impl ForecastMode {
    pub fn needs_model(self) -> bool {
        matches!(self, ForecastMode::Cold | ForecastMode::Warm | ForecastMode::Impute)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastOptions {
    pub lambda2: f64,
    pub k: usize,
    pub weighting: KnnWeighting,
}

impl Default for ForecastOptions {
    fn default() -> Self {
        ForecastOptions {
            lambda2: 1.0,
            k: DEFAULT_K,
            weighting: KnnWeighting::InverseDistance,
        }
    }
}

/// Indices of the named series, or of every series when `ids` is `None`.
pub fn select_series(pm: &ProfileMatrix, ids: Option<&[String]>) -> Result<Vec<usize>> {
    let index = pm.index();
    match ids {
        None => Ok((0..index.n_series()).collect()),
        Some(ids) => ids
            .iter()
            .map(|id| {
                index
                    .spans()
                    .iter()
                    .position(|s| &s.id == id)
                    .ok_or_else(|| Error::NotFound(id.clone()))
            })
            .collect(),
    }
}

/// Forecast every column of the selected series. `train` supplies the
/// observed cells used by the warm, average and neighbour modes. Columns of
/// unselected series are left at zero.
pub fn forecast_matrix(
    mode: ForecastMode,
    params: Option<&ModelParams>,
    train: &ProfileMatrix,
    meta: &MetadataMatrix,
    series: &[usize],
    opts: &ForecastOptions,
) -> Result<Array2<f64>> {
    if meta.n_columns() != train.n_columns() {
        return Err(Error::Shape(format!(
            "{} metadata columns for {} matrix columns",
            meta.n_columns(),
            train.n_columns()
        )));
    }
    let params = match (mode.needs_model(), params) {
        (true, None) => return Err(Error::InvalidConfig(format!("{mode:?} forecasts need a model"))),
        (_, p) => p,
    };
    let t = train.period();
    let spans = train.index().spans();
    let mut out = Array2::zeros((t, train.n_columns()));
    let profiles: Vec<AvgProfile> = match mode {
        ForecastMode::Avg | ForecastMode::Knn => spans.iter().map(|s| avg_py(train, &s.id)).collect::<Result<_>>()?,
        _ => Vec::new(),
    };
    let has_history: Vec<bool> = spans
        .iter()
        .map(|s| s.columns().any(|c| train.mask().column(c).iter().any(|&m| m)))
        .collect();

    for &s in series {
        let span = &spans[s];
        match mode {
            ForecastMode::Avg => {
                for c in span.columns() {
                    out.column_mut(c).assign(&profiles[s].values);
                }
            }
            ForecastMode::Knn => {
                let candidates: Vec<usize> = (0..spans.len()).filter(|&o| o != s && has_history[o]).collect();
                let cand_meta = MetadataMatrix::new(
                    CscMatrix::from_columns(meta.dim(), candidates.iter().map(|&o| meta.column(spans[o].first_column)))?,
                    Vec::new(),
                    candidates.iter().map(|&o| spans[o].id.clone()).collect(),
                )?;
                let cand_profiles: Vec<AvgProfile> = candidates.iter().map(|&o| profiles[o].clone()).collect();
                let query = meta.column(span.first_column);
                let k = opts.k.min(candidates.len());
                let f = knn_forecast(&query, &cand_meta, &cand_profiles, k, opts.weighting)?;
                for c in span.columns() {
                    out.column_mut(c).assign(&f);
                }
            }
            ForecastMode::Cold | ForecastMode::Warm | ForecastMode::Impute => {
                let params = params.expect("checked above");
                for c in span.columns() {
                    let col = match mode {
                        ForecastMode::Cold => forecast_cold(params, &meta.column(c).to_owned())?,
                        ForecastMode::Impute => predict_column(params, meta, c)?,
                        _ => {
                            let observed: Vec<(usize, f64)> = (0..t)
                                .filter(|&j| train.mask()[[j, c]])
                                .map(|j| (j, train.data()[[j, c]]))
                                .collect();
                            let phi: SparseVec = meta.column(c).to_owned();
                            // earlier years of a held-out series carry nothing to fit
                            if observed.is_empty() {
                                forecast_cold(params, &phi)?
                            } else {
                                forecast_warm(params, &WarmObservations::new(phi, observed)?, opts.lambda2)?.values
                            }
                        }
                    };
                    out.column_mut(c).assign(&col);
                }
            }
        }
    }
    Ok(out)
}

/// One row per cell inside each selected series' sample range, optionally
/// mapped back to natural units.
pub fn to_rows(
    pm: &ProfileMatrix,
    values: &Array2<f64>,
    series: &[usize],
    stats: Option<&StandardizationStats>,
) -> Result<Vec<ForecastRow>> {
    let index = pm.index();
    let mut rows = Vec::new();
    for &s in series {
        let span = &index.spans()[s];
        let st = match stats {
            Some(all) => Some(
                all.series
                    .get(&span.id)
                    .ok_or_else(|| Error::NotFound(format!("{} (in standardization stats)", span.id)))?,
            ),
            None => None,
        };
        for t in 0..span.len {
            let (j, c) = index.cell_of(span, t).expect("inside span");
            let v = values[[j, c]];
            rows.push(ForecastRow {
                series_id: span.id.clone(),
                t,
                value: st.map_or(v, |st| st.inverse(v)),
            });
        }
    }
    Ok(rows)
}

/// Place forecast rows into the layout of `pm`; the mask marks filled cells.
pub fn rows_to_matrix(pm: &ProfileMatrix, rows: &[ForecastRow]) -> Result<(Array2<f64>, Array2<bool>)> {
    let index = pm.index();
    let mut values = Array2::zeros(pm.data().dim());
    let mut filled = Array2::from_elem(pm.data().dim(), false);
    let mut unknown = HashSet::new();
    for r in rows {
        let Ok(span) = index.span(&r.series_id) else {
            unknown.insert(r.series_id.clone());
            continue;
        };
        let (j, c) = index
            .cell_of(span, r.t)
            .ok_or_else(|| Error::Format(format!("sample {} outside series '{}'", r.t, r.series_id)))?;
        values[[j, c]] = r.value;
        filled[[j, c]] = r.value.is_finite();
    }
    if !unknown.is_empty() {
        log::warn!("{} forecast series not in the truth matrix were ignored", unknown.len());
    }
    Ok((values, filled))
}

/// Score forecast rows on the observed cells of `truth`.
pub fn evaluate_rows(truth: &ProfileMatrix, rows: &[ForecastRow], kind: MetricKind, rho: f64) -> Result<MetricReport> {
    let (y_hat, filled) = rows_to_matrix(truth, rows)?;
    if let Some((j, c)) = truth.mask().indexed_iter().find(|&(jc, &m)| m && !filled[jc]).map(|(jc, _)| jc) {
        let id = &truth.index().series_of(c).id;
        return Err(Error::Format(format!("no forecast for series '{id}' at row {j} of column {c}")));
    }
    let cfg = MetricConfig::new(kind, rho).with_mask(truth.mask().clone());
    let result = apst(truth.data(), &y_hat, &cfg)?;
    Ok(MetricReport::new(&cfg, result))
}
