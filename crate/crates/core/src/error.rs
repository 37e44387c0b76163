use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: schema error: {message}")]
    Schema { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid pair: model {0} cannot be compared with itself")]
    InvalidPair(usize),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// The maximum-likelihood estimate does not exist (for example under perfect
    /// separation). A positive ridge penalty restores a unique optimum.
    #[error("non-identifiable model: {0}; refit with a positive ridge penalty")]
    NonIdentifiable(String),

    #[error("singular information matrix: models {cluster:?} are not connected to the anchor")]
    SingularInformation { cluster: Vec<usize> },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("bootstrap failed: {0}")]
    Bootstrap(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by the data not supporting the requested
    /// statistical procedure, as opposed to malformed input.
    pub fn is_statistical(&self) -> bool {
        matches!(self, Error::NonIdentifiable(_) | Error::SingularInformation { .. } | Error::NotPositiveDefinite(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
