use std::path::PathBuf;

use thiserror::Error;
use ttn_core::TtnError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid value for '{field}': {message}")]
    Config { field: String, message: String },

    #[error("runs cannot be compared: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Numerical(#[from] TtnError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

impl SimError {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        SimError::Config { field: field.to_string(), message: message.into() }
    }

    /// Process exit code: 2 for invalid input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config { .. } | SimError::Mismatch(_) => 2,
            SimError::Numerical(_) => 3,
            SimError::Io { .. } | SimError::Json(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
