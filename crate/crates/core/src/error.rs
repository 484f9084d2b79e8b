//! Crate-wide error type.

use std::fmt;

/// Errors surfaced by the library.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A vector length did not match an operator or function dimension.
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    /// A scalar parameter was outside its admissible range.
    Parameter(String),
    /// The requested evaluation has no supported closed form.
    Unsupported(String),
    /// A step-size certificate was violated; the message names the inequality.
    StepCondition(String),
    /// An iterate became non-finite at the given iteration.
    Divergence { iteration: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension {
                context,
                expected,
                got,
            } => write!(f, "{context}: expected length {expected}, got {got}"),
            Error::Parameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::Unsupported(msg) => write!(f, "unsupported operation: {msg}"),
            Error::StepCondition(msg) => write!(f, "step condition violated: {msg}"),
            Error::Divergence { iteration } => {
                write!(f, "non-finite iterate at iteration {iteration}")
            }
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, v: &[f64]) -> Result<()> {
    if v.len() != expected {
        return Err(Error::Dimension {
            context,
            expected,
            got: v.len(),
        });
    }
    Ok(())
}

pub(crate) fn check_positive(name: &str, value: f64) -> Result<()> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::Parameter(format!("{name} must be positive, got {value}")));
    }
    Ok(())
}
