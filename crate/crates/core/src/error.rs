use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("dimension mismatch at {field}: expected {expected}, found {found}")]
    DimensionMismatch {
        field: String,
        expected: usize,
        found: usize,
    },

    #[error("dangling id at {field}: {id}")]
    DanglingId { field: String, id: usize },

    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("non-finite value at {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(&'static str),

    #[error(
        "sigmoid fit did not converge after {iterations} iterations (gradient norm {residual:e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("attribute {0} is not calibrated")]
    Uncalibrated(usize),

    #[error("unknown image {0}")]
    UnknownImage(usize),

    #[error("attribute {attribute} out of range (M = {m})")]
    UnknownAttribute { attribute: usize, m: usize },

    #[error("cursor for attribute {0} is exhausted")]
    CursorExhausted(usize),

    #[error("all attribute trees are exhausted")]
    SearchExhausted,

    #[error("policy {0} cannot run: {1}")]
    Policy(String, String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}
