//! Replayable end-to-end runs: generate (or load) data, split, train,
//! forecast and score, with every seed derived from one root seed.
//!
//! ```toml
//! seed = 7
//! scenario = "cold_start"
//!
//! [split]
//! holdout = 0.2
//!
//! [synth]
//! period = 30
//! n_series = 200
//! years_per_series = 1
//! m = 50
//! variant = "low_rank"
//! rank = 4
//!
//! [model]
//! variant = "low_rank"
//! rank = 4
//!
//! [train]
//! mode = "full_batch"
//! lambda1 = 1e-6
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::metadata::MetadataMatrix;
use crate::metrics::{MetricKind, MetricReport};
use crate::model::ModelSpec;
use crate::pipeline::{
    evaluate_rows, forecast_matrix, make_split, scrub, select_series, to_rows, ForecastMode, ForecastOptions,
    SplitOptions,
};
use crate::profile::ProfileMatrix;
use crate::scenarios::{generate_synthetic, ScenarioKind, SyntheticConfig};
use crate::trainer::{derive_seed, fit, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    #[serde(default = "default_kind")]
    pub kind: MetricKind,
    /// Absent means an infinite threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

fn default_kind() -> MetricKind {
    MetricKind::Mse
}

impl Default for MetricSpec {
    fn default() -> Self {
        MetricSpec {
            kind: MetricKind::Mse,
            rho: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub scenario: ScenarioKind,
    /// Defaults to warm for the warm-start scenario, impute for missing data
    /// and cold otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forecast: Option<ForecastMode>,
    #[serde(default)]
    pub split: SplitOptions,
    /// Synthetic data; its seed is replaced by one derived from `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SyntheticConfig>,
    /// Directory written by `ingest`, used when `synth` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Required for model-based forecasts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    /// The training seed is replaced by one derived from `seed`.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub metric: MetricSpec,
    /// Neighbour count for k-NN forecasts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knn_k: Option<usize>,
}

/// Seeds of the individual stages.
pub const SYNTH_STREAM: u64 = 0;
pub const SPLIT_STREAM: u64 = 1;
pub const TRAIN_STREAM: u64 = 2;

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = crate::io::read_text(path)?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        let mut m: Manifest = if is_json {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
        };
        if let Some(d) = &m.data {
            if d.is_relative() {
                m.data = Some(path.parent().unwrap_or(Path::new(".")).join(d));
            }
        }
        Ok(m)
    }

    pub fn forecast_mode(&self) -> ForecastMode {
        self.forecast.unwrap_or(match self.scenario {
            ScenarioKind::WarmStart => ForecastMode::Warm,
            ScenarioKind::Missing => ForecastMode::Impute,
            _ => ForecastMode::Cold,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: MetricReport,
    pub final_loss: Option<f64>,
}

fn load_data(m: &Manifest) -> Result<(ProfileMatrix, MetadataMatrix)> {
    match (&m.synth, &m.data) {
        (Some(cfg), _) => {
            let mut cfg = *cfg;
            cfg.seed = derive_seed(m.seed, SYNTH_STREAM);
            let d = generate_synthetic(&cfg)?;
            Ok((d.pm, d.meta))
        }
        (None, Some(dir)) => Ok((
            io::load_profile(dir.join("profile.sfpm"))?,
            io::load_metadata(dir.join("metadata.sfsm"), None)?,
        )),
        (None, None) => Err(Error::InvalidConfig("manifest needs a [synth] section or a data directory".into())),
    }
}

/// Run the manifest. With `out`, the split, model, forecasts and reports are
/// written there; `metrics.json` depends only on the manifest when training
/// is full-batch.
pub fn run(m: &Manifest, out: Option<&Path>) -> Result<Outcome> {
    let (pm, meta) = load_data(m)?;
    let split_seed = derive_seed(m.seed, SPLIT_STREAM);
    let scenario = make_split(&pm, m.scenario, &m.split, split_seed)?;
    let train = scrub(&scenario.train)?;
    let truth = pm.with_mask(scenario.eval_mask.clone())?;

    let mode = m.forecast_mode();
    let mut cfg = m.train;
    cfg.seed = derive_seed(m.seed, TRAIN_STREAM);
    let (params, fit_report) = if mode.needs_model() {
        let spec = m
            .model
            .ok_or_else(|| Error::InvalidConfig(format!("{mode:?} forecasts need a [model] section")))?;
        let (p, r) = fit(spec, &train, &meta, &cfg)?;
        (Some(p), Some(r))
    } else {
        (None, None)
    };

    let series = if scenario.test_series.is_empty() {
        select_series(&pm, None)?
    } else {
        select_series(&pm, Some(&scenario.test_series))?
    };
    let opts = ForecastOptions {
        lambda2: cfg.lambda2,
        k: m.knn_k.unwrap_or(ForecastOptions::default().k),
        ..Default::default()
    };
    let values = forecast_matrix(mode, params.as_ref(), &train, &meta, &series, &opts)?;
    let rows = to_rows(&pm, &values, &series, None)?;
    let report = evaluate_rows(&truth, &rows, m.metric.kind, m.metric.rho.unwrap_or(f64::INFINITY))?;

    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        io::save_profile(dir.join("train.sfpm"), &train)?;
        io::save_profile(dir.join("truth.sfpm"), &truth)?;
        io::save_metadata(dir.join("metadata.sfsm"), &meta)?;
        if let Some(p) = &params {
            io::save_model(dir.join("model.sfmd"), p)?;
        }
        if let Some(r) = &fit_report {
            io::save_json(dir.join("fit.json"), r)?;
            io::write_with(dir.join("trace.csv"), |b| io::write_trace_csv(b, &r.loss_trace))?;
        }
        io::write_with(dir.join("forecast.csv"), |b| io::write_forecast_csv(b, &rows))?;
        io::save_json(dir.join("manifest.json"), m)?;
        io::save_json(dir.join("metrics.json"), &report)?;
    }
    Ok(Outcome {
        report,
        final_loss: fit_report.map(|r| r.final_loss),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MANIFEST: &str = r#"
seed = 11
scenario = "missing"

[synth]
period = 12
n_series = 10
years_per_series = 2
m = 6
variant = "full"
mf_rank = 2

[model]
variant = "full"
mf_rank = 2

[train]
mode = "full_batch"
iterations = 200
step_size = 0.05
lambda1 = 0.01
lambda2 = 0.01
"#;

    #[test]
    fn parses_and_runs() {
        let m: Manifest = toml::from_str(MANIFEST).unwrap();
        assert_eq!(m.forecast_mode(), ForecastMode::Impute);
        assert_eq!(m.synth.unwrap().mf_rank, Some(2));
        let a = run(&m, None).unwrap();
        let b = run(&m, None).unwrap();
        assert_eq!(a.report, b.report);
        assert!(a.report.value.is_finite());
    }

    #[test]
    fn model_required_for_model_forecasts() {
        let mut m: Manifest = toml::from_str(MANIFEST).unwrap();
        m.model = None;
        assert!(matches!(run(&m, None), Err(Error::InvalidConfig(_))));
        m.forecast = Some(ForecastMode::Avg);
        assert!(run(&m, None).is_ok());
    }
}
