use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A scalar argument outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Cholesky factorization failed even after escalating the diagonal jitter.
    #[error("numerical failure: {message} (last jitter tried: {jitter:e})")]
    Numerical { message: String, jitter: f64 },

    #[error("computer model evaluation failed: {0}")]
    Model(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("sampler initialization failed: {0}")]
    Initialization(String),
}

impl Error {
    pub(crate) fn numerical(message: impl Into<String>) -> Self {
        Error::Numerical {
            message: message.into(),
            jitter: 0.0,
        }
    }
}
