use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("image {height}x{width} is too small for a {levels}-level pyramid")]
    ImageTooSmall {
        height: usize,
        width: usize,
        levels: usize,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("variable does not belong to this tape")]
    ForeignVar,

    #[error("weights file has bad magic bytes")]
    BadMagic,

    #[error("weights file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("weights manifest mismatch: {0}")]
    Manifest(String),

    #[error("weights file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("incompatible weights: {0}")]
    IncompatibleWeights(String),

    #[error("corpus is empty: {0}")]
    EmptyCorpus(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
