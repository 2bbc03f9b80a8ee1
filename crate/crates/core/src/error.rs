use thiserror::Error;

/// Errors produced by the toolkit, grouped so the CLI can map them to exit codes:
/// validation -> 1, dependency -> 2, numerical -> 3.
#[derive(Debug, Error)]
pub enum SluError {
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("parse error at position {position}: {reason}")]
    Parse { position: usize, reason: String },

    #[error("missing dependency: {0}")]
    Dependency(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("vocab mismatch: {0}")]
    VocabMismatch(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("{0}")]
    Internal(String),
}

impl SluError {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SluError::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn parse(position: usize, reason: impl Into<String>) -> Self {
        SluError::Parse {
            position,
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        SluError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            SluError::Dependency(_) => 2,
            SluError::Numerical(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, SluError>;
