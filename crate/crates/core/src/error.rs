use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// The Gram matrix `H^H H` is singular or its 1-norm condition number
    /// exceeds the solver limit. Usually duplicated or collinear users.
    #[error("Gram matrix is singular or ill-conditioned (condition estimate {condition:e})")]
    SingularGram { condition: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("QPSK demapper called with zero channel gain")]
    ZeroGain,

    #[error("training diverged at epoch {epoch}: test error {test_error:e} (initial {initial:e})")]
    DivergenceDetected {
        epoch: usize,
        test_error: f64,
        initial: f64,
    },

    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },
}

impl Error {
    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}
