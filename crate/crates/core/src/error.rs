use std::path::PathBuf;

use thiserror::Error;

use crate::types::SampleId;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on domain objects was violated.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("id {0} is not part of the training set")]
    UnknownId(SampleId),

    #[error("id {0} is already labeled")]
    AlreadyLabeled(SampleId),

    #[error("id {0} is already pseudo-labeled")]
    AlreadyPseudo(SampleId),

    #[error("missing pseudo-mask for id {0}")]
    MissingMask(SampleId),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("{path}: {message}")]
    Ingestion { path: PathBuf, message: String },

    #[error("split error: {0}")]
    Split(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("capability error: {0}")]
    Capability(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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

    pub(crate) fn ingestion(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Ingestion {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by invalid user configuration rather than runtime failures.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Split(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
