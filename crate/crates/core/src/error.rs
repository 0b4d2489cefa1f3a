use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("invalid grouping ratio {0}: must lie in [0, 0.5)")]
    InvalidRatio(f64),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("corrupt token sequence: {0}")]
    Corrupt(String),

    #[error("target reduction {target:.4} is unattainable; maximum achievable is {max:.4}")]
    Unattainable { target: f64, max: f64 },

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("non-finite activation after layer {layer}")]
    NonFinite { layer: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] crate::checkpoint::FormatError),

    #[error("image: {0}")]
    Image(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
