//! Forecasts from a trained model: cold-start and long-range (`f(phi) + b`),
//! warm-start (latent factor fitted to a short prefix) and imputation.

use std::collections::HashSet;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg::solve;
use crate::metadata::MetadataMatrix;
use crate::model::{eval_column, eval_regression, ModelParams};
use crate::profile::{ProfileMatrix, SeriesStats};
use crate::sparse::SparseVec;

/// Metadata and a few observed values of a series that was not trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmObservations {
    pub phi: SparseVec,
    /// `(row, value)` pairs; rows are distinct.
    pub observed: Vec<(usize, f64)>,
}

impl WarmObservations {
    pub fn new(phi: SparseVec, observed: Vec<(usize, f64)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for &(j, v) in &observed {
            if !seen.insert(j) {
                return Err(Error::InvalidConfig(format!("row {j} observed twice")));
            }
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!("non-finite observation at row {j}")));
            }
        }
        Ok(WarmObservations { phi, observed })
    }
}

/// Forecast for a series without usable history: `f(phi) + b`.
///
/// For a model without regression this is just the bias.
pub fn forecast_cold(params: &ModelParams, phi: &SparseVec) -> Result<Array1<f64>> {
    Ok(eval_regression(params, &phi.view())? + &params.bias)
}

/// Ridge estimate of the latent factor of a new series, with `f`, `L` and `b`
/// held fixed: solves `(L_O^T L_O + lambda2 I) r = L_O^T (v - f_O - b_O)` over
/// the observed rows `O`.
pub fn estimate_latent(params: &ModelParams, warm: &WarmObservations, lambda2: f64) -> Result<Array1<f64>> {
    let mf = params
        .mf
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("latent estimation needs an MF term".into()))?;
    if !(lambda2 >= 0.0) {
        return Err(Error::InvalidConfig(format!("lambda2 must be >= 0, got {lambda2}")));
    }
    if warm.observed.is_empty() {
        return Err(Error::EmptyInput("no warm-start observations".into()));
    }
    let t = params.dims.t;
    if let Some(&(j, _)) = warm.observed.iter().find(|(j, _)| *j >= t) {
        return Err(Error::Shape(format!("observed row {j} outside period {t}")));
    }
    let base = forecast_cold(params, &warm.phi)?;
    let k = mf.l.ncols();
    let mut gram = Array2::<f64>::eye(k) * lambda2;
    let mut rhs = Array1::zeros(k);
    for &(j, v) in &warm.observed {
        let row = mf.l.row(j);
        let resid = v - base[j];
        for a in 0..k {
            rhs[a] += row[a] * resid;
            for b in 0..k {
                gram[[a, b]] += row[a] * row[b];
            }
        }
    }
    solve(&gram, &rhs).ok_or(Error::Underdetermined)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmForecast {
    pub values: Array1<f64>,
    /// Estimated latent factor, `None` for models without MF.
    pub latent: Option<Array1<f64>>,
    /// True when there were no observations and the cold forecast was used.
    pub fell_back: bool,
}

/// `f(phi) + L r + b` with `r` from [`estimate_latent`]. Models without MF
/// forecast with the regression only.
pub fn forecast_warm(params: &ModelParams, warm: &WarmObservations, lambda2: f64) -> Result<WarmForecast> {
    let cold = forecast_cold(params, &warm.phi)?;
    let Some(mf) = &params.mf else {
        return Ok(WarmForecast {
            values: cold,
            latent: None,
            fell_back: false,
        });
    };
    if warm.observed.is_empty() {
        log::warn!("warm-start forecast without observations; using the cold-start forecast");
        return Ok(WarmForecast {
            values: cold,
            latent: Some(Array1::zeros(mf.l.ncols())),
            fell_back: true,
        });
    }
    let r = estimate_latent(params, warm, lambda2)?;
    Ok(WarmForecast {
        values: cold + mf.l.dot(&r),
        latent: Some(r),
        fell_back: false,
    })
}

/// Fitted mean of training column `column`, using its learned latent factor.
pub fn predict_column(params: &ModelParams, meta: &MetadataMatrix, column: usize) -> Result<Array1<f64>> {
    if column >= params.dims.n || column >= meta.n_columns() {
        return Err(Error::Shape(format!("column {column} out of range")));
    }
    eval_column(params, &meta.column(column), params.latent(column))
}

/// Model mean for every cell of `pm`; callers read the unobserved cells.
pub fn impute(params: &ModelParams, pm: &ProfileMatrix, meta: &MetadataMatrix) -> Result<Array2<f64>> {
    if pm.n_columns() != params.dims.n || meta.n_columns() != params.dims.n || pm.period() != params.dims.t {
        return Err(Error::Shape(format!(
            "model has T={}, N={}; matrix is {}x{} with {} metadata columns",
            params.dims.t,
            params.dims.n,
            pm.period(),
            pm.n_columns(),
            meta.n_columns()
        )));
    }
    let mut out = Array2::zeros((pm.period(), pm.n_columns()));
    for i in 0..pm.n_columns() {
        out.column_mut(i).assign(&predict_column(params, meta, i)?);
    }
    Ok(out)
}

/// Map standardized values back to natural units.
pub fn to_natural_units(values: &Array1<f64>, stats: &SeriesStats) -> Array1<f64> {
    values.mapv(|z| stats.inverse(z))
}
