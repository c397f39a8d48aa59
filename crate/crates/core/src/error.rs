use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid layer sizes {0:?}: need at least two layers, each of width >= 1, ending in a single output")]
    InvalidLayerSizes(Vec<usize>),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite {term} at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, term: &'static str },

    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}: row {row}, column `{column}`: cannot parse {value:?}")]
    BadCell {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },

    #[error("{path}: row {row}: label must be 0 or 1, got {value:?}")]
    NonBinaryLabel {
        path: PathBuf,
        row: usize,
        value: String,
    },

    #[error("{0}: file contains no data rows")]
    EmptyFile(PathBuf),

    #[error("column `{0}` is constant; cannot standardize")]
    ConstantColumn(String),

    #[error("only one class present in labels")]
    SingleClass,

    #[error("invalid train count {train_count} for {total} rows")]
    InvalidTrainCount { train_count: usize, total: usize },

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("feature schema mismatch: expected {expected:?}, got {actual:?}")]
    SchemaMismatch {
        expected: Vec<String>,
        actual: Vec<String>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
