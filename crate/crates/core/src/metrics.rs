//! Average per-series thresholded error (APST).
//!
//! For each scored column, errors are averaged over the entries whose true
//! magnitude is at most `rho`; the per-column averages are then averaged.
//! With `rho = inf` this is the plain per-series MSE or MAE.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Mse,
    Mae,
}

impl MetricKind {
    fn error(self, y: f64, y_hat: f64) -> f64 {
        match self {
            MetricKind::Mse => (y - y_hat).powi(2),
            MetricKind::Mae => (y - y_hat).abs(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Mse => "APST_MSE",
            MetricKind::Mae => "APST_MAE",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricConfig {
    /// Threshold on `|Y|`; `f64::INFINITY` disables it.
    pub rho: f64,
    pub kind: MetricKind,
    /// Entries to score. `None` scores every entry.
    pub eval_mask: Option<Array2<bool>>,
}

impl MetricConfig {
    pub fn new(kind: MetricKind, rho: f64) -> Self {
        MetricConfig {
            rho,
            kind,
            eval_mask: None,
        }
    }

    pub fn with_mask(mut self, mask: Array2<bool>) -> Self {
        self.eval_mask = Some(mask);
        self
    }
}

/// Value of an APST evaluation and how many columns contributed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Apst {
    pub value: f64,
    pub n_series_scored: usize,
}

pub fn apst(y_test: &Array2<f64>, y_hat: &Array2<f64>, cfg: &MetricConfig) -> Result<Apst> {
    if y_test.dim() != y_hat.dim() {
        return Err(Error::Shape(format!(
            "truth {:?} vs prediction {:?}",
            y_test.dim(),
            y_hat.dim()
        )));
    }
    if let Some(m) = &cfg.eval_mask {
        if m.dim() != y_test.dim() {
            return Err(Error::Shape(format!("eval mask {:?} vs data {:?}", m.dim(), y_test.dim())));
        }
    }
    if !(cfg.rho > 0.0) {
        return Err(Error::InvalidConfig(format!("rho must be positive, got {}", cfg.rho)));
    }
    let mut total = 0.0;
    let mut scored = 0usize;
    for i in 0..y_test.ncols() {
        let mut num = 0.0;
        let mut den = 0usize;
        for j in 0..y_test.nrows() {
            if cfg.eval_mask.as_ref().is_some_and(|m| !m[[j, i]]) {
                continue;
            }
            let y = y_test[[j, i]];
            if y.abs() <= cfg.rho {
                num += cfg.kind.error(y, y_hat[[j, i]]);
                den += 1;
            }
        }
        if den > 0 {
            total += num / den as f64;
            scored += 1;
        }
    }
    if scored == 0 {
        return Err(Error::NoEvaluableEntries);
    }
    Ok(Apst {
        value: total / scored as f64,
        n_series_scored: scored,
    })
}

/// JSON metric report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    /// `None` encodes an infinite threshold.
    pub rho: Option<f64>,
    pub n_series_scored: usize,
    pub value: f64,
}

impl MetricReport {
    pub fn new(cfg: &MetricConfig, result: Apst) -> Self {
        MetricReport {
            metric: cfg.kind.name().to_string(),
            rho: cfg.rho.is_finite().then_some(cfg.rho),
            n_series_scored: result.n_series_scored,
            value: result.value,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn perfect_prediction_scores_zero() {
        let y = array![[1.0, -2.0], [0.5, 3.0]];
        let r = apst(&y, &y, &MetricConfig::new(MetricKind::Mae, f64::INFINITY)).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.n_series_scored, 2);
    }

    #[test]
    fn threshold_excludes_large_truth() {
        let y = array![[1.0], [3.0]];
        let y_hat = array![[0.0], [0.0]];
        let r = apst(&y, &y_hat, &MetricConfig::new(MetricKind::Mse, 2.0)).unwrap();
        assert_eq!(r.value, 1.0);
    }

    #[test]
    fn empty_columns_are_skipped() {
        let y = array![[1.0, 10.0], [1.0, 10.0]];
        let y_hat = array![[0.0, 0.0], [2.0, 0.0]];
        let r = apst(&y, &y_hat, &MetricConfig::new(MetricKind::Mae, 5.0)).unwrap();
        assert_eq!((r.value, r.n_series_scored), (1.0, 1));
    }

    #[test]
    fn nothing_to_score() {
        let y = array![[10.0]];
        assert!(matches!(
            apst(&y, &y, &MetricConfig::new(MetricKind::Mse, 1.0)),
            Err(Error::NoEvaluableEntries)
        ));
        let masked = MetricConfig::new(MetricKind::Mse, f64::INFINITY).with_mask(array![[false]]);
        assert!(apst(&y, &y, &masked).is_err());
    }

    #[test]
    fn eval_mask_restricts_scoring() {
        let y = array![[1.0], [5.0]];
        let y_hat = array![[0.0], [0.0]];
        let cfg = MetricConfig::new(MetricKind::Mse, f64::INFINITY).with_mask(array![[false], [true]]);
        assert_eq!(apst(&y, &y_hat, &cfg).unwrap().value, 25.0);
    }

    #[test]
    fn report_encodes_infinite_rho_as_null() {
        let cfg = MetricConfig::new(MetricKind::Mse, f64::INFINITY);
        let rep = MetricReport::new(&cfg, Apst { value: 0.5, n_series_scored: 3 });
        assert_eq!(
            serde_json::to_string(&rep).unwrap(),
            r#"{"metric":"APST_MSE","rho":null,"n_series_scored":3,"value":0.5}"#
        );
    }
}
