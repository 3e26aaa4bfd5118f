use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rank layout: {0}")]
    Layout(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dense reconstruction of {requested} elements exceeds the limit of {limit}")]
    TooLarge { requested: usize, limit: usize },

    #[error("direction vector has zero length")]
    ZeroDirection,

    #[error("budget of {budget} bytes is below the minimum of {minimum} bytes")]
    BudgetTooSmall { budget: u64, minimum: u64 },

    #[error("unknown scene instance id {0}")]
    UnknownInstance(u64),

    #[error("non-finite value in {tensor} at step {step}")]
    NonFinite { tensor: String, step: usize },

    #[error("bad model file: {0}")]
    Format(String),

    #[error("unsupported model file version {found} (newest supported is {supported})")]
    Version { found: u16, supported: u16 },

    #[error("dataset error in {frame}: {reason}")]
    Dataset { frame: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("png: {0}")]
    Png(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
