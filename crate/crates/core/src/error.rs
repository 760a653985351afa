use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: bad IDX magic number {found} (expected {expected})")]
    BadMagic { path: PathBuf, found: u32, expected: u32 },

    #[error("dimension mismatch: {what} (expected {expected}, got {actual})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("index {index} out of range for {what} of length {len}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("{0}")]
    InvalidInput(String),

    #[error("unknown class {class} (model has {class_count} classes)")]
    UnknownClass { class: usize, class_count: usize },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("unsupported model format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u64, supported: u64 },

    #[error("corrupt model: {0}")]
    CorruptModel(String),

    #[error("path context was built for a different input vector")]
    StaleContext,

    #[error("internal invariant violated: {0}")]
    Invariant(String),

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

    /// True for errors caused by the caller's inputs rather than by a broken
    /// internal invariant.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Invariant(_))
    }
}
