use thiserror::Error;

/// Errors raised by the decoder-learning library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("codeword differences span only a rank-{rank} subspace of R^{dim}")]
    NotSpanning { dim: usize, rank: usize },

    #[error("degenerate decoder: S*delta vanishes for pair {pair}")]
    DegenerateDecoder { pair: usize },

    #[error("codeword {0} has no samples")]
    MissingClass(usize),

    #[error("matrix is singular or not positive definite")]
    Singular,

    #[error("projection did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid_param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
