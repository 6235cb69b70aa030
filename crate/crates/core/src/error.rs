use thiserror::Error;

/// Errors raised by the numerical operations of this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "covariance (-Δ + I)^(-s) with s = {s} is not trace-class in one dimension (need s > 1/2)"
    )]
    NotTraceClass { s: f64 },

    #[error("precision operator is not positive: smallest eigenvalue {margin:e} (required > {required:e})")]
    NotPositive { margin: f64, required: f64 },

    #[error("divergence is infinite: {0}")]
    InfiniteDivergence(String),

    #[error("unsupported method: {0}")]
    UnsupportedMethod(String),

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("leading precision block is numerically singular (condition number {condition:e})")]
    RankDeficient { condition: f64 },

    #[error(
        "potential violates its growth bound at a point with sup norm {sup_norm}: Φ = {value}"
    )]
    GrowthViolation { sup_norm: f64, value: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
