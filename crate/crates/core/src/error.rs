use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GpeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GpeError {
    #[error("dimension mismatch for `{key}`: expected {expected}, got {got}")]
    Dimension {
        key: String,
        expected: String,
        got: String,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite value in {what}")]
    NonFinite { what: String },
    #[error("simulation unstable at step {step}: {detail}")]
    Instability { step: usize, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("integrity error in {file}: field `{field}`: {detail}")]
    Integrity {
        file: PathBuf,
        field: String,
        detail: String,
    },
}

impl GpeError {
    pub fn dim(key: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        GpeError::Dimension {
            key: key.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GpeError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn integrity(
        file: impl Into<PathBuf>,
        field: impl Into<String>,
        detail: impl Into<String>,
    ) -> Self {
        GpeError::Integrity {
            file: file.into(),
            field: field.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code: 2 usage/configuration, 3 data, 4 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            GpeError::Config(_) | GpeError::Input(_) | GpeError::Contract(_) => 2,
            GpeError::Io { .. } | GpeError::Integrity { .. } | GpeError::Dimension { .. } => 3,
            GpeError::NonFinite { .. } | GpeError::Instability { .. } => 4,
        }
    }
}
