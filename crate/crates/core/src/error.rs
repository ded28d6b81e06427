use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A shape, range or other precondition was violated by the caller's configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A NaN or infinity appeared where finite values are required.
    #[error("numeric fault in {location}: {detail}")]
    Numeric { location: String, detail: String },

    /// An API was used out of order (stale tape, mismatched buffers).
    #[error("usage error: {0}")]
    Usage(String),

    /// The policy was asked to act with no sensor available.
    #[error("refused to act: {0}")]
    Refusal(String),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("checkpoint error in record `{record}`: {msg}")]
    Checkpoint { record: String, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// An error raised during training, with the episode and step where it occurred.
    #[error("episode {episode}, step {step}: {source}")]
    Training {
        episode: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numeric(location: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            location: location.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
