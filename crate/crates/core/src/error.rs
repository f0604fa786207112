//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{what} contains a non-finite value")]
    NonFinite { what: &'static str },

    #[error("{what} is numerically degenerate (norm {norm:.3e})")]
    DegenerateVector { what: &'static str, norm: f64 },

    #[error("conjugate gradient breakdown at iteration {iteration}: curvature {curvature:.3e}")]
    CgBreakdown { iteration: usize, curvature: f64 },

    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("optimizer failed to converge: {0}")]
    Optimizer(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("IDX magic mismatch: expected {expected:#010x}, found {found:#010x}")]
    IdxBadMagic { expected: u32, found: u32 },

    #[error("IDX file truncated while reading {0}")]
    IdxTruncated(&'static str),

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("checkpoint magic mismatch: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("checkpoint checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("checkpoint truncated while reading {0}")]
    CheckpointTruncated(&'static str),

    #[error("checkpoint descriptor error: {0}")]
    Descriptor(String),

    #[error("classifier holdout accuracy {accuracy:.4} below required {required:.2}")]
    AccuracyBar { accuracy: f64, required: f64 },

    #[error("covariance not positive semi-definite: eigenvalue {eigenvalue:.3e} below clamp tolerance")]
    NonPsdCovariance { eigenvalue: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// Rough classification used by the CLI to pick an exit code:
    /// data/input problems vs numerical failures.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::Empty(_)
                | Error::InvalidSplit(_)
                | Error::IdxBadMagic { .. }
                | Error::IdxTruncated(_)
                | Error::CountMismatch { .. }
                | Error::BadMagic { .. }
                | Error::UnsupportedVersion(_)
                | Error::ChecksumMismatch { .. }
                | Error::CheckpointTruncated(_)
                | Error::Descriptor(_)
                | Error::Config(_)
                | Error::Io(_)
                | Error::Serde(_)
        )
    }
}
