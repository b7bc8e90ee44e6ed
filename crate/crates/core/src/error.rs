use std::path::PathBuf;

use crate::dataset::ManifestReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate region: {0}")]
    DegenerateRegion(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("undefined similarity: zero-norm vector")]
    UndefinedSimilarity,

    #[error("cannot normalize a zero vector")]
    ZeroVector,

    #[error("invalid dims: {0}")]
    InvalidDims(String),

    #[error("bad magic in {0}")]
    BadMagic(PathBuf),

    #[error("unsupported format version {version} in {path}")]
    UnsupportedVersion { path: PathBuf, version: u8 },

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("trailing bytes after payload in {0}")]
    TrailingBytes(PathBuf),

    #[error("NaN or infinite payload value in {0}")]
    NanPayload(PathBuf),

    #[error("invalid detection: {0}")]
    InvalidDetection(String),

    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),

    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),

    #[error("invalid manifest:\n{0}")]
    Manifest(ManifestReport),

    #[error("no reference in submap {0:?}")]
    NoReferenceInSubmap(Option<String>),

    #[error("empty retrieval index")]
    EmptyIndex,

    #[error("score out of range [0, 1]: {0}")]
    ScoreOutOfRange(f64),

    #[error("no ground truth: total_gt must be at least 1")]
    NoGroundTruth,

    #[error("empty set: {0}")]
    EmptySet(String),

    #[error("model/mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("missing annotations for frame {0}")]
    MissingAnnotations(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
