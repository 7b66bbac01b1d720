use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Conll { line: usize, message: String },

    #[error("invalid tag {tag:?}")]
    InvalidTag { tag: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("invalid span: {0}")]
    Span(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training aborted{}: {message}", iteration.map(|i| format!(" at bootstrap iteration {i}")).unwrap_or_default())]
    TrainingAborted {
        iteration: Option<usize>,
        message: String,
    },

    #[error(transparent)]
    Artifact(#[from] ArtifactError),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for failures caused by the numerics rather than the input data.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::TrainingAborted { .. })
    }
}

/// Failures when decoding a model container.
#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("not a bootner model file")]
    BadMagic,

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("file is truncated")]
    Truncated,

    #[error("checksum mismatch, file is corrupt")]
    Integrity,

    #[error("malformed section: {0}")]
    Malformed(String),

    #[error("parameter dimensions disagree with the tag set: {0}")]
    Dimension(String),
}
