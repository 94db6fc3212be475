use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("eigenvalue {value} at index {index} is not strictly positive")]
    InvalidEigenvalue { index: usize, value: f64 },
    #[error("rotation is not orthogonal (max deviation {deviation:e})")]
    InvalidRotation { deviation: f64 },
    #[error("matrix is singular or not positive definite: {0}")]
    SingularMatrix(String),
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("action norm {norm} exceeds radius {radius}")]
    ActionOutOfSet { norm: f64, radius: f64 },
    #[error("horizon must be at least 1")]
    InvalidHorizon,
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("log-density is not finite at the initial point")]
    InvalidInit,
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}
