use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid base measure: {0}")]
    InvalidBaseMeasure(String),

    #[error("argument `{name}` out of domain: {detail}")]
    Domain { name: &'static str, detail: String },

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("quadrature error estimate {estimate:.3e} exceeds the requested bound {bound:.3e}")]
    ErrorBoundExceeded { estimate: f64, bound: f64 },

    #[error("numerical failure in {context}: {detail}")]
    Numerical { context: &'static str, detail: String },

    #[error("configuration space too large for exact enumeration: {0}")]
    TooLarge(String),

    #[error("empty constraint band: {0}")]
    EmptyBand(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(name: &'static str, detail: impl Into<String>) -> Error {
    Error::Domain {
        name,
        detail: detail.into(),
    }
}
