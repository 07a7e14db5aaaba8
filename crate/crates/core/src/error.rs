use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("singular affine map (det = {0})")]
    SingularMap(f64),
    #[error("box outside frame")]
    BoxOutsideFrame,
    #[error("paste out of frame")]
    PasteOutOfFrame,
    #[error("transform collapsed target")]
    TransformCollapsed,
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("length mismatch: {0} predictions vs {1} ground-truth boxes")]
    LengthMismatch(usize, usize),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("zero-variance template")]
    ZeroVarianceTemplate,
    #[error("template larger than search region")]
    TemplateTooLarge,
    #[error("sequence {0:?} not found")]
    UnknownSequence(String),
    #[error("sequence {0:?} has no annotation")]
    MissingAnnotation(String),
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), msg: msg.into() }
    }
}
