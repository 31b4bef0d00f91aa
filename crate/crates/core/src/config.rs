//! TOML run configuration.
//!
//! ```toml
//! [model]
//! variant = "low_rank"
//! rank = 4
//! mf_rank = 3
//!
//! [train]
//! lambda1 = 1.0
//! mode = "full_batch"
//!
//! [grid]
//! lambda1 = { lo = 0.1, hi = 1000.0, n = 10 }
//! lambda2 = [0.1, 1.0, 10.0]
//!
//! [cv]
//! mode = "k_fold"
//! folds = 5
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::trainer::TrainConfig;
use crate::tuning::{log_grid, CvConfig, Grid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        parse_toml(path.as_ref())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

/// Grid values, either listed or log-spaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Axis {
    Values(Vec<f64>),
    Log { lo: f64, hi: f64, n: usize },
}

impl Axis {
    pub fn values(&self) -> Result<Vec<f64>> {
        match self {
            Axis::Values(v) => Ok(v.clone()),
            Axis::Log { lo, hi, n } => log_grid(*lo, *hi, *n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GridSpec {
    pub lambda1: Option<Axis>,
    pub lambda2: Option<Axis>,
    #[serde(default)]
    pub knots: Vec<usize>,
}

impl GridSpec {
    pub fn resolve(&self) -> Result<Grid> {
        let axis = |a: &Option<Axis>| a.as_ref().map_or(Ok(Vec::new()), Axis::values);
        Ok(Grid {
            lambda1: axis(&self.lambda1)?,
            lambda2: axis(&self.lambda2)?,
            knots: self.knots.clone(),
        })
    }
}

/// Search space and cross-validation settings for `tune`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TuneConfig {
    pub grid: GridSpec,
    #[serde(default)]
    pub cv: CvConfig,
}

impl TuneConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        parse_toml(path.as_ref())
    }
}

fn parse_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = crate::io::read_text(path)?;
    toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}
