use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the pipeline.
///
/// Every variant is a data error from the CLI's point of view; usage errors
/// are reported by the argument parser before any of this code runs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn row(line: u64, msg: impl Into<String>) -> Self {
        Error::Row {
            line,
            message: msg.into(),
        }
    }
}
