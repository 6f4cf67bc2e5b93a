//! Crate-wide error type.
//!
//! Every failure carries a short machine-readable code (see [`Error::code`])
//! so the CLI can emit single-line `error[code]: message` diagnostics.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("no R-peaks detected")]
    EmptyPeaks,

    #[error("segmentation error: {0}")]
    Segmentation(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid model state: {0}")]
    InvalidState(String),

    #[error("no samples predicted as class {0}")]
    EmptyClass(usize),

    #[error("stage order: {0}")]
    StageOrder(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("checkpoint: bad magic bytes")]
    CheckpointMagic,

    #[error("checkpoint: unsupported format version {0}")]
    CheckpointVersion(u16),

    #[error("checkpoint: file truncated")]
    CheckpointTruncated,

    #[error("checkpoint: shape mismatch: {0}")]
    CheckpointShape(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short stable code used in CLI diagnostics and exit reporting.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "config",
            Error::Data(_) => "data",
            Error::Shape(_) => "shape",
            Error::Numeric(_) => "numeric",
            Error::EmptyPeaks => "no-peaks",
            Error::Segmentation(_) => "segment",
            Error::InvalidDataset(_) => "dataset",
            Error::InvalidState(_) => "state",
            Error::EmptyClass(_) => "empty-class",
            Error::StageOrder(_) => "stage-order",
            Error::Manifest(_) => "manifest",
            Error::CheckpointMagic => "ckpt-magic",
            Error::CheckpointVersion(_) => "ckpt-version",
            Error::CheckpointTruncated => "ckpt-truncated",
            Error::CheckpointShape(_) => "ckpt-shape",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
