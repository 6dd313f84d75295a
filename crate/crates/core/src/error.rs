use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("softmax has no unmasked position")]
    EmptyAttention,

    #[error("{0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },

    #[error("document {id}: {message}")]
    Document { id: String, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),

    #[error("config: {0}")]
    Config(String),

    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 internal invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => 1,
            Error::Format { .. }
            | Error::Document { .. }
            | Error::Checkpoint(_)
            | Error::Truncated(_)
            | Error::IdMismatch(_)
            | Error::Io { .. } => 2,
            Error::Shape { .. }
            | Error::InvalidTensor(_)
            | Error::NonFinite(_)
            | Error::EmptyAttention => 3,
        }
    }
}
