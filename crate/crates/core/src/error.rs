use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the training and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset invariant violated: {0}")]
    InvalidDataset(String),

    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error(
        "{path}:{line}: feature dimension {found} does not match dataset dimension {expected}"
    )]
    DimensionMismatch {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("row {row} has zero norm")]
    ZeroNorm { row: usize },

    #[error("no clusters available: {0}")]
    EmptyClusters(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("label {label} out of range for {count} clusters")]
    LabelOutOfRange { label: usize, count: usize },

    #[error("all losses identical; mixture fit is degenerate")]
    DegenerateLosses,

    #[error("matching does not cover label {0}")]
    UncoveredLabel(usize),

    #[error("missing diagnostics: {0}")]
    MissingDiagnostics(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
