use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared across the crate.
#[derive(Debug)]
pub enum Error {
    /// Dimension mismatch between operands.
    Shape { ctx: &'static str, expected: usize, got: usize },
    /// Arithmetic produced or would produce an invalid value.
    Numeric(String),
    /// An API contract was violated (e.g. gradient of a non-scalar).
    Contract(String),
    /// Input lies outside the domain a model is defined on.
    Domain(String),
    /// An iterative solver failed to converge or was infeasible.
    Solver(String),
    /// Structured-text parse failure (checkpoints, configs).
    Parse { line: usize, msg: String },
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { ctx, expected, got } => {
                write!(f, "shape error in {ctx}: expected {expected}, got {got}")
            }
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Solver(msg) => write!(f, "solver error: {msg}"),
            Error::Parse { line, msg } => write!(f, "parse error at line {line}: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
