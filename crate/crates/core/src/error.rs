use thiserror::Error;

/// Errors raised by the pricing engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AewError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("state {value} is outside the model domain ({domain})")]
    Domain { value: f64, domain: &'static str },

    #[error("Hermite degree {0} is not supported")]
    UnsupportedDegree(usize),

    #[error("weight order {0} is not implemented for this model")]
    UnsupportedOrder(u8),

    #[error("covariance is not positive semidefinite (ridge {ridge:e} exceeded the limit)")]
    NotPositiveSemidefinite { ridge: f64 },

    #[error("ODE integration produced a non-finite state at t = {t}")]
    OdeDiverged { t: f64 },

    #[error("simulation produced a non-finite state on path {path}")]
    StateExplosion { path: u64 },

    #[error("benchmark price is zero; error rate undefined")]
    ZeroBenchmark,

    #[error("{0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, AewError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> AewError {
    AewError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
