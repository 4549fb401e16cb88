use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid ellipse: {0}")]
    InvalidEllipse(String),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("downscale factor {factor} does not fit a {width}x{height} image")]
    BadDownscale { factor: u32, width: u32, height: u32 },

    #[error("no training shapes")]
    NoTrainingShapes,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("mean shift bandwidth must be positive, got {0}")]
    BadBandwidth(f64),

    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("model validation failed: {0}")]
    InvalidModel(String),

    #[error("not a model file (bad magic bytes)")]
    BadMagic,

    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),

    #[error("model file checksum mismatch")]
    ChecksumMismatch,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: bad annotation: {message}")]
    Annotation {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    ImageFile { path: PathBuf, message: String },

    #[error("evaluation needs {needed} frames, got {got}")]
    NotEnoughFrames { needed: usize, got: usize },

    #[error("empty results")]
    EmptyResults,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
