use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("target column `{0}` not found")]
    MissingTarget(String),

    #[error("non-numeric cell `{value}` in numeric column `{column}` (row {row})")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },

    #[error("missing value in column `{column}` (row {row})")]
    MissingValue { column: String, row: usize },

    #[error("response column is constant and cannot be normalized")]
    ConstantResponse,

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("not enough rows: need at least {needed}, have {have}")]
    TooFewRows { needed: usize, have: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("clean reference loss is zero; add noise to the clean data or use a relative floor")]
    ZeroReferenceLoss,

    #[error("KKT block matrix is singular even after diagonal jitter")]
    SingularKkt,

    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
