use thiserror::Error;

/// Errors raised by the tensor, tree and integrator layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TtnError {
    #[error("invalid mode index {mode} for tensor of order {order}")]
    InvalidMode { mode: usize, order: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dense size {size} exceeds cap {cap}")]
    CapExceeded { size: usize, cap: usize },

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("tree mismatch: {0}")]
    TreeMismatch(String),

    #[error("incompatible ranks: {0}")]
    IncompatibleRanks(String),

    #[error("operator error: {0}")]
    Operator(String),

    #[error("non-finite value encountered at t = {t}")]
    NonFinite { t: f64 },

    #[error("integration failed at step {step}: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<TtnError>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, TtnError>;

impl From<std::io::Error> for TtnError {
    fn from(e: std::io::Error) -> Self {
        TtnError::Io(e.to_string())
    }
}
