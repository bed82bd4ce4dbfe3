//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes disagree. Both shapes are spelled out so the message can be
    /// acted on without a debugger.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The contribution mask selects no pixels; the caller must skip the step.
    #[error("degenerate batch: contribution mask selects no pixels")]
    DegenerateBatch,

    /// A gradient went NaN/Inf. The optimizer refuses to apply the step.
    #[error("non-finite gradient in layer `{layer}`: optimizer step aborted")]
    NonFiniteGradient { layer: String },

    /// Training on a dataset with zero positive pixels would collapse to a
    /// constant negative prediction.
    #[error("refusing to train: dataset contains no positive pixels")]
    NoPositivePixels,

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("manifest {path}: line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A dataset record failed validation (missing file, dimension mismatch, ...).
    #[error("record `{record}`: {message}")]
    Record { record: String, message: String },

    /// A binary/text artifact file failed to parse or verify.
    #[error("{path}: {message}")]
    FileFormat { path: PathBuf, message: String },

    #[error("image {height}x{width} is smaller than the receptive field {receptive_field} (strict mode)")]
    ImageTooSmall {
        height: usize,
        width: usize,
        receptive_field: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn dim_mismatch(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
