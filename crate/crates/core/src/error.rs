use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown {kind}: {id}")]
    UnknownEntity { kind: &'static str, id: String },

    #[error("no visual feature for video {0}")]
    MissingFeature(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {rejected} of {total} records rejected (limit 10%)")]
    TooManyRejects {
        path: PathBuf,
        rejected: usize,
        total: usize,
    },

    #[error("duplicate tsc_id {tsc_id} (lines {first_line} and {second_line})")]
    DuplicateTsc {
        tsc_id: String,
        first_line: usize,
        second_line: usize,
    },

    #[error("incompatible checkpoint format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}; parameter norms: {norms}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        norms: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the failure stems from user-supplied data rather than the runtime.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::UnknownEntity { .. }
                | Error::MissingFeature(_)
                | Error::Parse { .. }
                | Error::TooManyRejects { .. }
                | Error::DuplicateTsc { .. }
                | Error::VersionMismatch { .. }
                | Error::Corrupt(_)
                | Error::Empty(_)
                | Error::Io { .. }
                | Error::Json(_)
        )
    }
}
