use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("field has no {0} head")]
    MissingHead(&'static str),

    #[error("architecture `{0}` needs a shared-geometry initialization checkpoint")]
    MissingSgiInit(String),

    #[error("non-finite gradient in segment `{segment}` ({count} entries)")]
    NonFiniteGradient { segment: String, count: usize },

    #[error("non-finite density on ray {ray}")]
    NonFiniteDensity { ray: usize },

    #[error("non-finite loss at step {step}: {breakdown}")]
    NonFiniteLoss { step: u64, breakdown: String },

    #[error("invalid checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
