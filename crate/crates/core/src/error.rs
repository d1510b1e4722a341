use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the fusion engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid concept pair: {0}")]
    InvalidPair(String),

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("backend unavailable at {url} (status {status:?}): {message}")]
    BackendUnavailable {
        url: String,
        status: Option<u16>,
        message: String,
    },

    #[error("episode aborted at step {step}: {source}")]
    EpisodeAborted {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    /// Every step of a PPO batch had a non-finite probability ratio.
    #[error("degenerate batch: all {skipped} steps skipped")]
    DegenerateBatch { skipped: usize },

    #[error("training stalled at iteration {iteration} after {consecutive} degenerate batches")]
    TrainingStalled {
        iteration: usize,
        consecutive: usize,
    },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("artifact not found: {}", .0.display())]
    ArtifactNotFound(PathBuf),

    #[error("artifact already exists: {}", .0.display())]
    ArtifactExists(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
