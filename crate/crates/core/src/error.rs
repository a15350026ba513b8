use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// Every mixture component has a log-density of -inf (or NaN) at the query point.
    #[error("all component densities underflow at the query point")]
    Underflow,

    #[error("non-positive epsilon scale {lambda} at step {step} (t = {time})")]
    NonPositiveLambda { step: usize, time: f64, lambda: f64 },

    #[error("trajectory {trajectory} diverged at step {step}: |x| = {norm:e}")]
    Divergence {
        trajectory: usize,
        step: usize,
        norm: f64,
    },

    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("discriminator saturated: {fraction:.4} of outputs within 1e-6 of 0 or 1")]
    Saturated { fraction: f64 },

    #[error("covariance is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for errors raised by a numerical blow-up rather than bad input.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::NonFiniteLoss { .. } | Error::Underflow
        )
    }
}
