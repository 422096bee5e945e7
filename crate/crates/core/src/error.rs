use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A model, partition, tree or cost parameter violates its invariant.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// The Fleming-Viot run never placed mass in the tail intervals.
    #[error("tail estimation failed: {0}")]
    Estimation(String),

    #[error("integer overflow computing {0}")]
    Overflow(&'static str),

    #[error("node id {id} out of range (tree has {count} nodes)")]
    InvalidNode { id: usize, count: usize },

    /// Malformed serialized tree or solution file.
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("horizon mismatch: tree has {tree} stages, realization has {realization}")]
    HorizonMismatch { tree: usize, realization: usize },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn format(line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            line,
            message: message.into(),
        }
    }
}
