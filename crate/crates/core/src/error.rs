use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid sentence: {0}")]
    InvalidSentence(String),

    #[error("invalid transition {action} at step {step}: {reason}")]
    InvalidTransition {
        action: String,
        step: usize,
        reason: String,
    },

    #[error("incomplete parse: words without head {0:?}")]
    IncompleteParse(Vec<usize>),

    #[error("tree is not projective")]
    NonProjective,

    #[error("malformed tree: {0}")]
    MalformedTree(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("sentence {id}: {message}")]
    Structure { id: String, message: String },

    #[error("unknown action {0:?}")]
    UnknownAction(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at update {update}: loss {loss}")]
    Divergence { update: usize, loss: f64 },

    #[error("incompatible checkpoints: {0}")]
    Incompatible(String),

    #[error("corpora are misaligned: {0}")]
    Alignment(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Validation errors are caused by bad input; everything else is internal.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Divergence { .. } => false,
            Error::Io(e) => matches!(e.kind(), io::ErrorKind::NotFound | io::ErrorKind::PermissionDenied),
            _ => true,
        }
    }
}
