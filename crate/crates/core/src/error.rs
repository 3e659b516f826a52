use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("interval [{s}, {t}] is reversed or out of range")]
    BadInterval { s: usize, t: usize },

    #[error("time grid with {steps} steps is not dyadic")]
    NotDyadic { steps: usize },

    #[error("vector of norm {norm:.3e} at grid point {index} cannot be projected to the sphere")]
    NearZero { index: usize, norm: f64 },

    #[error("solver aborted at node {node}: {source}")]
    Step {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
