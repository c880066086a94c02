use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("unsolvable task: {0}")]
    Unsolvable(String),

    #[error("no plan reaches a goal node")]
    NoPlan,

    /// Caller asked for an option whose preconditions do not hold.
    #[error("precondition violated for {0}")]
    Precondition(String),

    #[error("substitution error: {0}")]
    Substitution(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
