use std::path::PathBuf;

use thiserror::Error;

use crate::newton::FitResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column `{0}` not found in input header")]
    MissingColumn(String),

    #[error("dataset has no usable rows ({dropped} dropped)")]
    EmptyDataset { dropped: usize },

    #[error("non-positive or non-finite time {time} on data row {row}")]
    NonPositiveTime { row: usize, time: f64 },

    #[error("invalid weight {value} on data row {row} (must be finite and >= 0)")]
    InvalidWeight { row: usize, value: f64 },

    #[error("invalid frequency {value} on data row {row} (must be a positive integer)")]
    InvalidFreq { row: usize, value: f64 },

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("exp(beta'Z) overflowed: |beta'Z| = {magnitude}")]
    NonFiniteIntermediate { magnitude: f64 },

    #[error("no summary payload from partner {partner_id}")]
    MissingPartnerPayload { partner_id: i64 },

    #[error("partner {partner_id} summary does not match the designated grid: {detail}")]
    GridMismatch { partner_id: i64, detail: String },

    #[error("risk set total S0 = {s0} <= 0 at event time {time} in stratum [{stratum}]")]
    DegenerateRiskSet { stratum: String, time: f64, s0: f64 },

    #[error("information matrix is singular (pivot {pivot} at column {column}); check for constant or collinear covariates")]
    SingularHessian { column: usize, pivot: f64 },

    #[error("information matrix is not symmetric (entry ({row}, {col}) differs by {diff})")]
    NotSymmetric { row: usize, col: usize, diff: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no convergence after {} iterations", .0.iterations_used)]
    MaxIterationsExceeded(Box<FitResult>),

    #[error("non-finite log-likelihood, gradient or Hessian at iteration {iteration}")]
    NonFiniteLikelihood { iteration: usize },

    #[error("non-positive variance {variance} for parameter `{name}`")]
    NonPositiveVariance { name: String, variance: f64 },

    #[error("partition sizes sum to {requested} but the dataset has {available} rows")]
    SizeMismatch { requested: usize, available: usize },

    #[error("malformed table {file}: {detail}")]
    MalformedTable { file: String, detail: String },

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV failure on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    /// Coarse category used for exit codes and error replies.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::MissingColumn(_)
            | Error::EmptyDataset { .. }
            | Error::NonPositiveTime { .. }
            | Error::InvalidWeight { .. }
            | Error::InvalidFreq { .. }
            | Error::InvalidSpec(_)
            | Error::SizeMismatch { .. } => ErrorCategory::Config,
            Error::MaxIterationsExceeded(_) => ErrorCategory::NotConverged,
            Error::MissingPartnerPayload { .. }
            | Error::GridMismatch { .. }
            | Error::MalformedTable { .. }
            | Error::Io { .. }
            | Error::Csv { .. } => ErrorCategory::Protocol,
            Error::NonFiniteIntermediate { .. }
            | Error::DegenerateRiskSet { .. }
            | Error::SingularHessian { .. }
            | Error::NotSymmetric { .. }
            | Error::DimensionMismatch(_)
            | Error::NonFiniteLikelihood { .. }
            | Error::NonPositiveVariance { .. } => ErrorCategory::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    NotConverged,
    Protocol,
    Numeric,
    Config,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::NotConverged => "not_converged",
            ErrorCategory::Protocol => "protocol",
            ErrorCategory::Numeric => "numeric",
            ErrorCategory::Config => "config",
        }
    }

    /// 2 not converged, 3 protocol, 4 numeric, 5 config.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::NotConverged => 2,
            ErrorCategory::Protocol => 3,
            ErrorCategory::Numeric => 4,
            ErrorCategory::Config => 5,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "not_converged" => ErrorCategory::NotConverged,
            "protocol" => ErrorCategory::Protocol,
            "numeric" => ErrorCategory::Numeric,
            "config" => ErrorCategory::Config,
            _ => return None,
        })
    }
}
