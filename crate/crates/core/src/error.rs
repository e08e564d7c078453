use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("latent label {label} out of range 1..={k}")]
    LabelOutOfRange { label: u32, k: usize },

    #[error("second-moment matrix is zero (all responses vanish)")]
    ZeroMomentMatrix,

    #[error("covariance matrix is singular or not positive definite")]
    SingularCovariance,

    #[error("non-finite {what} at iteration {iter}")]
    NonFinite { what: &'static str, iter: usize },

    #[error("c-transform maximizer stayed on the bracket boundary after {doublings} doublings")]
    BracketExhausted { doublings: u32 },

    #[error("agent {agent} holds an empty shard")]
    EmptyShard { agent: usize },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
