use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while loading inputs or running scenarios.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing layer `{layer}` (expected {path})")]
    MissingLayer { layer: String, path: PathBuf },

    #[error("{file}: feature `{feature}`: {message}")]
    Feature {
        file: String,
        feature: String,
        message: String,
    },

    #[error("{file}: {message}")]
    File { file: String, message: String },

    #[error("{file}:{line}: {message}")]
    Row {
        file: String,
        line: u64,
        message: String,
    },

    #[error("invalid scenario: {0}")]
    Validation(String),

    #[error("intervention on `{target}` would evict residents: {message}")]
    Eviction { target: String, message: String },

    #[error("unknown target `{0}`")]
    UnknownTarget(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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

    /// True for errors caused by bad inputs rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
