use thiserror::Error;

use crate::expr::ParseError;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid intervention: {0}")]
    InvalidIntervention(String),

    #[error("invalid evaluation point: {0}")]
    InvalidPoint(String),

    #[error("invalid draw: {0}")]
    InvalidDraw(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("gram matrix is ill-conditioned: factorization failed with jitter up to {max_jitter:e}")]
    IllConditioned { max_jitter: f64 },

    #[error("policy `{policy}` cannot be used here: {reason}")]
    PolicyMismatch { policy: String, reason: String },

    #[error("candidate set is empty")]
    EmptyCandidates,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("traces have ragged step counts: {0}")]
    RaggedTraces(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
