use thiserror::Error;

use crate::graph_core::VertexId;

/// Errors raised by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown vertex {0}")]
    UnknownVertex(VertexId),

    #[error("no edge between {0} and {1}")]
    MissingEdge(VertexId, VertexId),

    #[error("self-loop at vertex {0} is not allowed")]
    SelfLoop(VertexId),

    #[error("{what} has {size} vertices, above the limit of {limit}")]
    TooLarge {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("height truncation did not converge up to M = {max_m} (relative change {change:.3e})")]
    NonConvergentTruncation { max_m: i64, change: f64 },

    #[error("vertex {0} is not connected to the root: infinite resistance")]
    Disconnected(VertexId),

    #[error("surgery precondition failed: {0}")]
    Surgery(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than a failing computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::UnknownVertex(_)
                | Error::MissingEdge(..)
                | Error::SelfLoop(_)
                | Error::TooLarge { .. }
                | Error::Parse { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
