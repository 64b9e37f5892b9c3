//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter lies outside the domain where the object is defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// A requested derivative order is not implemented.
    #[error("unsupported order: {0}")]
    UnsupportedOrder(String),
    /// Evaluation at a singular point (e.g. `v = v_*` with a negative kinetic exponent).
    #[error("singular point: {0}")]
    Singular(String),
    /// A quadrature did not reach the requested accuracy.
    #[error("accuracy error: {0}")]
    Accuracy(String),
    /// A computation was refused because its preconditions cannot be met on the given resolution.
    #[error("refused: {0}")]
    Refused(String),
    /// Inconsistent or invalid configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Failure of a linear-algebra or time-stepping routine.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// An iteration left its stability bound.
    #[error("divergence: {0}")]
    Divergence(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
