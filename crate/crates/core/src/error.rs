use thiserror::Error;

use crate::linalg::Vector;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A Cholesky pivot was not strictly positive.
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("dense KKT system is singular (column {column})")]
    SingularKkt { column: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The objective is undefined at the requested point.
    #[error("objective undefined at evaluation point: {0}")]
    Domain(String),

    /// The local solver ran out of iterations. `best` is the iterate with
    /// the smallest stationarity residual seen.
    #[error("local solver did not converge after {iterations} iterations (residual {residual:e})")]
    MaxItersExceeded {
        best: Vector,
        residual: f64,
        iterations: usize,
    },

    #[error("BFGS step is degenerate (|s|_inf = {0:e}); update skipped")]
    DegenerateStep(f64),

    #[error("not enough positive samples to estimate a rate (need 3, have {0})")]
    InsufficientData(usize),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("agent {agent}: {source}")]
    Agent {
        agent: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn for_agent(self, agent: usize) -> Self {
        Error::Agent {
            agent,
            source: Box::new(self),
        }
    }

    /// Strips any agent wrapper.
    pub fn root(&self) -> &Error {
        match self {
            Error::Agent { source, .. } => source.root(),
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
