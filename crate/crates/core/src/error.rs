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

    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("record `{file}` has {lines} lines but {labels} labels")]
    LengthMismatch {
        file: String,
        lines: usize,
        labels: usize,
    },

    #[error("duplicate path `{0}`")]
    DuplicatePath(String),

    #[error("file `{0}` has no lines")]
    EmptyFile(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("file `{0}` has no timestamp")]
    MissingTimestamp(String),

    #[error("unknown project `{0}`")]
    UnknownProject(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for table of {size} rows")]
    OutOfRange { index: usize, size: usize },

    #[error("corrupt {what}: {reason}")]
    Corrupt { what: &'static str, reason: String },

    #[error("unsupported {what} version `{found}`")]
    Version { what: &'static str, found: String },

    #[error("vocabulary hash mismatch: checkpoint expects {expected}, got {found}")]
    VocabMismatch { expected: String, found: String },

    #[error("non-finite loss at epoch {epoch}, step {step}: {loss}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        loss: f64,
    },

    #[error("{0}")]
    Coverage(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// True for errors caused by bad user input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::NonFiniteLoss { .. })
    }
}
