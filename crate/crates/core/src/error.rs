use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("no surface found")]
    NoSurface,

    #[error("insufficient depth below surface: surface {surface} + depth {depth} > {available}")]
    InsufficientDepth {
        surface: usize,
        depth: usize,
        available: usize,
    },

    #[error("no oscillation in signal")]
    NoOscillation,

    #[error("all estimates invalid")]
    AllInvalid,

    #[error("missing ground truth for {0}")]
    MissingGroundTruth(String),

    #[error("mismatched pair: {0}")]
    MismatchedPair(String),

    #[error("payload size mismatch for {path}: expected {expected} bytes, found {found}")]
    PayloadSize {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed header {path}: {source}")]
    Header {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("malformed config: {0}")]
    Config(#[from] toml::de::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
