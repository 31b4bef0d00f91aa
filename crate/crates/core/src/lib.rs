//! Forecasting of seasonal time-series profiles by joint metadata regression
//! and matrix factorization.
//!
//! Each period of each series is stacked as one column of a `T x N` matrix
//! ([`profile`]). A column is modelled as `f(phi_i) + L R_i + b`, where `phi_i`
//! is a sparse metadata vector ([`metadata`]), `f` one of several regressions
//! ([`model`]) and `L R` a low-rank term. Parameters are fit by mini-batch
//! gradient descent over observed cells ([`trainer`]), hyperparameters by
//! two-stage cross-validation ([`tuning`]). The fitted model forecasts whole
//! periods for long-range, cold-start and warm-start series and imputes
//! missing cells ([`predictor`]).

pub mod baselines;
pub mod basis;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod metadata;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod predictor;
pub mod profile;
pub mod scenarios;
pub mod sparse;
pub mod trainer;
pub mod tuning;

pub use error::{Error, Result};
pub use metadata::MetadataMatrix;
pub use model::{Dims, ModelParams, ModelSpec, Regression};
pub use profile::{ProfileMatrix, RawSeries};
pub use sparse::SparseVec;
pub use trainer::{FitReport, Mode, TrainConfig};
