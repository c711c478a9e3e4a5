use thiserror::Error;

/// Errors raised by samplers, estimators and the persistence layer.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain where the construction is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// The operation is only defined for a restricted parameter (e.g. γ = √(8/3)).
    #[error("unsupported parameter: {0}")]
    Unsupported(String),

    /// A rejection sampler exhausted its attempt budget.
    #[error("retry limit reached after {attempts} attempts ({accepted} accepted, empirical acceptance rate {rate:.3e})")]
    RetryLimit {
        attempts: u64,
        accepted: u64,
        rate: f64,
    },

    /// Not enough data for an estimator.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Input data contained NaN or infinite values.
    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn retry(attempts: u64, accepted: u64) -> Self {
        let rate = if attempts == 0 {
            0.0
        } else {
            accepted as f64 / attempts as f64
        };
        Error::RetryLimit {
            attempts,
            accepted,
            rate,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
