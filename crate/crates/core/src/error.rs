use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("point must have at least one coordinate")]
    EmptyPoint,

    #[error("non-finite coordinate at index {index}")]
    NonFinite { index: usize },

    #[error("proxies coincide; the line through them is undefined")]
    CoincidentProxies,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("distance argument must be non-negative, got {0}")]
    NegativeDistance(f64),

    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("class index {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("batch is empty")]
    EmptyBatch,

    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error("{path}: line {line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: bad `{field}`: {message}")]
    BadField {
        path: PathBuf,
        field: &'static str,
        message: String,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
