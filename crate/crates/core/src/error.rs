use thiserror::Error;

/// Errors raised by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty mesh")]
    EmptyMesh,

    #[error("insufficient points: requested {requested}, cloud has {available}")]
    InsufficientPoints { requested: usize, available: usize },

    #[error("empty point set")]
    EmptyPointSet,

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("semantic category {0} out of range [0, 23]")]
    CategoryOutOfRange(u32),

    #[error("cannot normalize a zero vector")]
    ZeroVector,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "power iteration did not converge for component {component} after {iterations} \
         iterations (last eigenvalue change {eigen_delta:e}, vector change {vector_delta:e})"
    )]
    NonConvergence {
        component: usize,
        iterations: usize,
        eigen_delta: f64,
        vector_delta: f64,
    },

    #[error("empty index")]
    EmptyIndex,

    #[error("graph disconnected")]
    GraphDisconnected,

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("unknown location id {0}")]
    UnknownLocation(u64),

    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },

    #[error("malformed {what} at byte offset {offset}: {message}")]
    Malformed {
        what: &'static str,
        offset: u64,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
