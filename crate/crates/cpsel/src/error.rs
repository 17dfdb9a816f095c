//! Error taxonomy shared by the whole crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by model construction, detection, and inference.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input data failed validation (shape mismatch, non-finite entries, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Not enough data to estimate the requested quantity.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A numerical routine failed or detected an inconsistent internal state.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Reading or writing external data failed.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// External data could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for failures of numerical routines, as opposed to bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                _ => Error::Parse("I/O failure while processing CSV".into()),
            }
        } else {
            Error::Parse(e.to_string())
        }
    }
}
