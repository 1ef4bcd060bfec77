use std::path::PathBuf;

/// Errors produced by the lesion synthesis pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty mask: {0}")]
    EmptyMask(&'static str),

    #[error("insufficient sample: {what} has {found} voxels, need at least {required}")]
    InsufficientSample {
        what: &'static str,
        found: usize,
        required: usize,
    },

    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    #[error("degenerate intensity range inside mask (low={low}, high={high})")]
    DegenerateRange { low: f64, high: f64 },

    #[error("slice {slice} has no non-WMH brain voxels to sample from")]
    FullyWmhSlice { slice: usize },

    #[error("shape mismatch: expected {expected:?}, got {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("could not place lesion {index} after {attempts} attempts")]
    PlacementFailed { index: usize, attempts: usize },

    #[error("corrupt file {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },

    #[error("format version mismatch: file has {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("NIfTI error in {path}: {detail}")]
    Nifti { path: PathBuf, detail: String },

    #[error("parse error in {path}: {detail}")]
    Parse { path: PathBuf, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("image encoding: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
