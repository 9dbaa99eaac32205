use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    /// Fixed-point iteration did not settle; carries the last iterate.
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("protocol violation at round {round}: {detail}")]
    Protocol { round: usize, detail: String },

    #[error("serialization: {0}")]
    Serde(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub(crate) fn capacity(msg: impl Into<String>) -> Self {
        Error::Capacity(msg.into())
    }

    /// Attach a round index to an error raised inside the online loop.
    pub fn at_round(self, round: usize) -> Self {
        Error::Round {
            round,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
