use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: byte {offset}: {reason}")]
    MalformedPnm {
        path: PathBuf,
        offset: usize,
        reason: String,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("image is {width}x{height}, need at least 3x3")]
    ImageTooSmall { width: usize, height: usize },

    #[error("k-means requires k <= distinct points (k = {k}, distinct = {distinct})")]
    TooFewPoints { k: usize, distinct: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    /// The query image yielded no descriptors; there is nothing to match.
    #[error("query produced no descriptors")]
    NoFeatures,

    /// The query has descriptors but none of them fall within tau of any
    /// cluster, so every class score is zero.
    #[error("query matched no clusters")]
    NoMatches,

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("model file {path}: {reason}")]
    ModelFormat { path: PathBuf, reason: String },

    #[error("model file {path}: checksum mismatch (stored {stored}, computed {computed})")]
    ChecksumMismatch {
        path: PathBuf,
        stored: String,
        computed: String,
    },

    #[error("model file {path}: unsupported format version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Per-image failures that evaluation tallies instead of propagating.
    pub fn is_no_signal(&self) -> bool {
        matches!(self, Error::NoFeatures | Error::NoMatches)
    }
}
