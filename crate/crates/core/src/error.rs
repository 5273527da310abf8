use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation (negative time, dose, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Parameters or signals that cannot be combined (missing k_a, mismatched grids, ...).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("ill-conditioned: {0}")]
    IllConditioned(String),

    #[error("step size too large: dt*max(k) = {product:.4} exceeds {limit}")]
    StepSize { product: f64, limit: f64 },

    #[error("synchronization error: {0}")]
    Sync(String),

    #[error("truncated frame: {available} symbols remain, {expected} expected")]
    Truncation { available: usize, expected: usize },

    #[error("did not converge: {0}")]
    Convergence(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 2,
            Error::Domain(_) | Error::Data(_) | Error::Parse { .. } | Error::Io(_) => 3,
            Error::Numeric(_)
            | Error::IllConditioned(_)
            | Error::StepSize { .. }
            | Error::Convergence(_) => 4,
            Error::Sync(_) | Error::Truncation { .. } => 5,
        }
    }
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
