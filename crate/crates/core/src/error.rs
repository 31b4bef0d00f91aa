use crate::trainer::FitReport;

/// Errors returned by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The seasonal period must contain at least two samples.
    #[error("invalid period {0}: must be at least 2")]
    InvalidPeriod(usize),
    /// No series (or an empty series) was supplied.
    #[error("empty input: {0}")]
    EmptyInput(String),
    /// A series id was not present in the index.
    #[error("series '{0}' not found")]
    NotFound(String),
    /// A series has zero variance and cannot be standardized.
    #[error("series '{0}' has zero variance")]
    DegenerateSeries(String),
    /// Too few documents to build a vocabulary with the df >= 2 filter.
    #[error("insufficient corpus: need at least 2 documents, got {0}")]
    InsufficientCorpus(usize),
    /// A series in the index has no metadata column.
    #[error("no metadata for series '{0}'")]
    MetadataMissing(String),
    #[error("invalid basis: {0}")]
    InvalidBasis(String),
    /// Array dimensions do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// The observation mask is empty.
    #[error("no observed entries")]
    NoObservations,
    /// Training produced a non-finite or exploding loss.
    #[error("training diverged with step size {step_size}")]
    Divergence {
        step_size: f64,
        report: Box<FitReport>,
    },
    /// Latent estimation without regularization hit a singular system.
    #[error("underdetermined latent estimate: pass a positive lambda2")]
    Underdetermined,
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("cannot build {folds} folds from {n} columns")]
    TooManyFolds { folds: usize, n: usize },
    /// Every column's thresholded denominator is zero.
    #[error("no evaluable entries")]
    NoEvaluableEntries,
    #[error("k = {k} exceeds the {available} available neighbours")]
    KTooLarge { k: usize, available: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    /// A scenario leaves nothing to score.
    #[error("nothing to evaluate: {0}")]
    NothingToEvaluate(String),
    /// A container or text file could not be decoded.
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidPeriod(_) => "invalid-period",
            Error::EmptyInput(_) => "empty-input",
            Error::NotFound(_) => "not-found",
            Error::DegenerateSeries(_) => "degenerate-series",
            Error::InsufficientCorpus(_) => "insufficient-corpus",
            Error::MetadataMissing(_) => "metadata-missing",
            Error::InvalidBasis(_) => "invalid-basis",
            Error::Shape(_) => "shape-error",
            Error::NoObservations => "no-observations",
            Error::Divergence { .. } => "divergence",
            Error::Underdetermined => "underdetermined",
            Error::InvalidRange(_) => "invalid-range",
            Error::TooManyFolds { .. } => "too-many-folds",
            Error::NoEvaluableEntries => "no-evaluable-entries",
            Error::KTooLarge { .. } => "k-too-large",
            Error::InvalidConfig(_) => "invalid-config",
            Error::NothingToEvaluate(_) => "nothing-to-evaluate",
            Error::Format(_) => "format-error",
            Error::Io(_) => "io-error",
            Error::Csv(_) => "csv-error",
            Error::Json(_) => "json-error",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
