use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Check,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("gaussian blur kernel size must be odd, got {0}")]
    EvenKernel(usize),

    #[error("box {bbox:?} lies outside the {width}x{height} image")]
    BoxOutOfBounds { bbox: [f64; 4], width: u32, height: u32 },

    #[error("box {0:?} has zero area")]
    ZeroAreaBox([f64; 4]),

    #[error("both boxes are degenerate; IoU is undefined")]
    DegenerateIou,

    #[error("zero-norm feature vector")]
    ZeroNorm,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("image {image_id}: file {path} not found")]
    MissingImage { image_id: u64, path: PathBuf },

    #[error("annotation {annotation_id} references unknown image id {image_id}")]
    UnknownImage { annotation_id: u64, image_id: u64 },

    #[error("unknown class id {0}")]
    UnknownClass(u32),

    #[error("annotation {annotation_id}: malformed geometry: {reason}")]
    MalformedGeometry { annotation_id: u64, reason: String },

    #[error("duplicate id {0}")]
    DuplicateId(u64),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("cannot assemble episode: {0}")]
    Sampling(String),

    #[error("classes with fewer than {k} instances: {classes:?}")]
    InsufficientShots { k: usize, classes: Vec<(u32, usize)> },

    #[error("scene placement failed after {attempts} rejections; use smaller objects or fewer per scene")]
    Placement { attempts: usize },

    #[error("nothing to evaluate: ground truth is empty")]
    NoGroundTruth,

    #[error("config error: {0}")]
    Config(String),

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidParam(_) | Error::EvenKernel(_) | Error::InvalidSplit(_) => {
                ErrorKind::Config
            }
            Error::CheckFailed(_) => ErrorKind::Check,
            Error::Context { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }
}
