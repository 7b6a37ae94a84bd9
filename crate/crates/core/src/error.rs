use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("image has zero dimensions ({width}x{height})")]
    ZeroDimensions { width: usize, height: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("no keypoint found on any configuration circle")]
    ConfigurationFailure,

    #[error("descriptor is all zero: the image activates no filter")]
    ZeroDescriptor,

    #[error("cannot normalize a zero vector")]
    ZeroVector,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("unsupported format version: {0}")]
    Version(String),

    #[error("corrupted payload: {0}")]
    Corrupt(String),

    #[error("query has no relevant items in the reference set")]
    NoRelevant,

    #[error("degenerate label set: {0}")]
    DegenerateLabels(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by numerically failed computation rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::ZeroDescriptor | Error::ZeroVector
        )
    }
}
