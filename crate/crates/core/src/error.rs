use thiserror::Error;

/// Errors raised by the paired-data graphical lasso routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix dimension {0} is not even; paired data needs p = 2q")]
    OddDimension(usize),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("non-finite value in input")]
    NonFinite,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("eigendecomposition failed")]
    EigenFailure,

    #[error("maximum likelihood estimate does not exist for this model: {0}")]
    MleNonexistent(String),

    #[error("graph is not fully symmetric: {0}")]
    NotFullySymmetric(String),

    #[error("models are not nested: {0}")]
    NotNested(String),

    #[error("every grid point failed during model selection")]
    AllGridPointsFailed,
}

pub type Result<T> = std::result::Result<T, PdError>;
