use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An operation was given tensors whose shapes do not conform.
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Bad argument to an operation or configuration (usage error).
    #[error("{0}")]
    InvalidArg(String),

    /// A malformed input file, reported with its line number.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch} ({detail})")]
    Diverged { epoch: usize, detail: String },

    /// A predicted label had no entry in the active label map.
    #[error("label {0:?} has no mapping")]
    UnmappedLabel(String),

    #[error("token index {index} out of range for vocabulary of size {size}")]
    TokenOutOfRange { index: usize, size: usize },

    #[error("empty {0}")]
    Empty(&'static str),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArg(msg.into())
    }

    /// Process exit code contract: 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArg(_) => 1,
            Error::Parse { .. } | Error::Io { .. } | Error::UnmappedLabel(_) | Error::Empty(_) => {
                2
            }
            Error::ShapeMismatch { .. } | Error::Diverged { .. } | Error::TokenOutOfRange { .. } => {
                3
            }
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
