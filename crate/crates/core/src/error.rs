use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid range [{lo}, {hi})")]
    Range { lo: usize, hi: usize },

    #[error("composition error: {0}")]
    Composition(String),

    #[error("stage error: {0}")]
    Stage(String),

    #[error("{path}:{line}: parse error: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("{path}:{line}: schema error: {message}")]
    Schema { path: String, line: usize, message: String },

    #[error("planning error: {0}")]
    Planning(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{stage} stage failed: {source}")]
    InStage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("component error: {0}")]
    Component(#[from] ComponentError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(stage: &'static str, e: Error) -> Self {
        Self::InStage {
            stage,
            source: Box::new(e),
        }
    }

    /// True for failures caused by the filesystem rather than the data.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::InStage { source, .. } => source.is_io(),
            _ => false,
        }
    }
}

/// Failure reported by an annotator component (linker, judge, expander).
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ComponentError {
    /// Network or service failure; worth retrying.
    #[error("transport: {0}")]
    Transport(String),
    /// The service answered with something unusable.
    #[error("bad response: {0}")]
    BadResponse(String),
    /// A replay cache had no recorded answer for this request.
    #[error("no cached response for request {0}")]
    CacheMiss(String),
}

impl ComponentError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ComponentError::Transport(_))
    }
}
