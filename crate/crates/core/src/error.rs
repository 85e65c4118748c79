use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid token {0:?}: tokens must be non-empty and contain no whitespace")]
    InvalidToken(String),

    #[error("bad token id {id} (vocabulary size {size})")]
    BadTokenId { id: usize, size: usize },

    #[error("malformed expression at token {position}: {reason}")]
    MalformedExpression { position: usize, reason: String },

    #[error("empty argument to {0}")]
    EmptyArgument(&'static str),

    #[error("already reduced: no operation token present")]
    AlreadyReduced,

    #[error("unterminated iteration: final output does not end with [END]")]
    UnterminatedIteration,

    #[error("malformed query: {0}")]
    MalformedQuery(String),

    #[error("{}:{line}: {reason}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("index {index} out of range ({len} examples available)")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("no attendable key for query row {0}")]
    NoAttendableKey(usize),

    #[error("empty batch: every target position is padding")]
    EmptyBatch,

    #[error("backward called without a taped forward pass")]
    NoTape,

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(u64),

    #[error("sequence of length {len} exceeds the maximum of {max}")]
    Overlength { len: usize, max: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("length mismatch: {predictions} predictions vs {golds} golds")]
    LengthMismatch { predictions: usize, golds: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn parse(path: impl Into<PathBuf>, line: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// True for errors caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::NonFiniteLoss(_))
    }
}
