use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid parameters: {0}")]
    InvalidTheta(String),
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{what} index {index} out of range (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("linear system is singular")]
    Singular,
    #[error("instance too large: {0}")]
    InstanceTooLarge(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_index(what: &'static str, index: usize, size: usize) -> Result<()> {
    if index < size {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange { what, index, size })
    }
}
