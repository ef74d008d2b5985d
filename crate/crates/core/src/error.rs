use thiserror::Error;

/// Errors raised by the fitting and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid configuration (basis sizes, penalty order, bin counts, ...).
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed input values or shapes.
    #[error("argument error: {0}")]
    Argument(String),
    /// A coordinate lies outside the region a model was fitted on.
    #[error("domain error: {value} is outside [{lo}, {hi}]")]
    Domain { value: f64, lo: f64, hi: f64 },
    /// The numerical fit could not be completed.
    #[error("fit error: {0}")]
    Fit(String),
    /// Unknown subject or variable.
    #[error("lookup error: {0}")]
    Lookup(String),
    /// A statistic is undefined for the given input.
    #[error("undefined: {0}")]
    Undefined(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn argument(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}
