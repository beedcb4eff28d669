use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by any stage of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {message}")]
    Parse { context: String, message: String },

    #[error("bad magic {found:?}, expected \"CASE\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported CASE version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("{0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("zero-norm embedding row {0:?}")]
    ZeroNorm(String),

    #[error("image error: {0}")]
    Image(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Short machine-readable category, used for CLI exit codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. }
            | Error::BadMagic { .. }
            | Error::UnsupportedVersion(_)
            | Error::Truncated(_)
            | Error::Image(_) => "format",
            Error::Invalid(_) | Error::DimensionMismatch { .. } | Error::ZeroNorm(_) => {
                "validation"
            }
            Error::Stage { source, .. } => source.kind(),
        }
    }

    /// The underlying error with any stage wrapper removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Name of the pipeline stage that failed, when known.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}
