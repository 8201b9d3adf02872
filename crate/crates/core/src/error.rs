use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SheError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure: {message} (achieved error {achieved:e})")]
    NumericFailure { message: String, achieved: f64 },

    #[error("non-finite value at site {site} on step {step}")]
    NonFinite { site: usize, step: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular integrand: {0}")]
    SingularIntegrand(String),
}

impl SheError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SheError::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>, achieved: f64) -> Self {
        SheError::NumericFailure {
            message: msg.into(),
            achieved,
        }
    }
}

pub type Result<T> = std::result::Result<T, SheError>;
