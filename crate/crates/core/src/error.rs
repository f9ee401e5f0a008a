use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Clone, Error)]
pub enum RdpfError {
    /// A distribution, coupling or problem was constructed with bad parameters.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// An operation was called with an out-of-contract argument.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A requested point lies outside the mathematical domain of the quantity.
    #[error("domain error: {0}")]
    Domain(String),
    /// The Monte-Carlo weights blew up; usually a symptom of a step size that
    /// is too large for the current multipliers.
    #[error("divergence: {0}")]
    Divergence(String),
    /// An iterative routine failed to converge.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, RdpfError>;
