use std::fmt;

/// Errors surfaced by the library.
#[derive(Debug)]
pub enum Error {
    /// Shapes of inputs are inconsistent (named dimensions in the message).
    Dimension(String),
    /// An argument is outside its domain (non-positive scale, empty group, ...).
    InvalidArgument(String),
    /// A matrix required to be symmetric positive definite failed to factor.
    NotPositiveDefinite(String),
    /// A combinatorial enumeration exceeded its configured budget.
    BudgetExceeded(String),
    /// Numerical failure (overflow, singular system, non-finite value).
    Numeric(String),
    /// I/O failure, with the path when known.
    Io(String, std::io::Error),
    /// Parse failure in a data or config file, with 1-based line number.
    Parse { path: String, line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::NotPositiveDefinite(msg) => {
                write!(f, "matrix is not symmetric positive definite: {msg}")
            }
            Error::BudgetExceeded(msg) => write!(f, "enumeration budget exceeded: {msg}"),
            Error::Numeric(msg) => write!(f, "numerical failure: {msg}"),
            Error::Io(path, err) => write!(f, "i/o failure on {path}: {err}"),
            Error::Parse { path, line, msg } => {
                write!(f, "parse error at {path}:{line}: {msg}")
            }
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(_, err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(String::from("<unknown>"), err)
    }
}
