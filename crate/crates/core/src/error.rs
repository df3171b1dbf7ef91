use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad files, bad shapes, bad configuration.
    Input,
    /// Factorization failures, diverged training, undefined metrics.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value {value} at {location}")]
    NonFinite { location: String, value: f64 },

    #[error("duplicate scalar name `{0}`")]
    DuplicateName(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("cholesky factorization failed (max jitter {max_jitter:e}); kernel is ill-conditioned or inputs contain duplicates")]
    Cholesky { max_jitter: f64 },

    #[error("training diverged at epoch {epoch} (learning rate {learning_rate}): loss is {loss}")]
    Diverged {
        epoch: usize,
        learning_rate: f64,
        loss: f64,
    },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("{0} is undefined for this input")]
    Undefined(&'static str),

    #[error("all {count} candidates failed; last error: {last}")]
    AllCandidatesFailed { count: usize, last: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("checksum mismatch for {file}")]
    Checksum { file: String },

    #[error("unsupported bundle format version {found} (this build reads up to {supported})")]
    FormatVersion { found: u32, supported: u32 },

    #[error("corrupt model bundle: {0}")]
    Bundle(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Cholesky { .. }
            | Error::Diverged { .. }
            | Error::Undefined(_)
            | Error::Verification(_)
            | Error::AllCandidatesFailed { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Input,
        }
    }
}
