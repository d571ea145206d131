//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes disagree; `context` names the offending layer or operation.
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("architecture error at layer {layer}: {message}")]
    Architecture { layer: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    /// Malformed input file; `offset` is the byte position of the failure.
    #[error("parse error at byte {offset} in {path}: {message}")]
    Parse {
        path: String,
        offset: u64,
        message: String,
    },

    /// A caller broke an internal contract (missing history, empty interval, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The brute-force oracle refuses inputs above its size guard.
    #[error("oracle size guard exceeded: {0}")]
    OracleGuard(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
