//! Error type shared by all core modules.

use alloc::string::String;
use core::fmt;

/// Errors raised by core operations.
///
/// `ShapeMismatch` marks contract violations (caller bugs), `Domain` marks
/// scalar arguments outside their documented range, `Data` and `Config` mark
/// bad inputs, and `Numeric` marks non-finite values produced at runtime.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    ShapeMismatch {
        context: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    Domain {
        what: &'static str,
        value: f64,
    },
    Data(String),
    Config(String),
    Numeric(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch {
                context,
                expected,
                got,
            } => write!(
                f,
                "shape mismatch in {context}: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            Error::Domain { what, value } => {
                write!(f, "domain error: {what} (value {value})")
            }
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
