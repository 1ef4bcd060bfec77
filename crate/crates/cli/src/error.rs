use std::path::PathBuf;

use lesiongen::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("missing input file {}", .0.display())]
    MissingInput(PathBuf),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Stable machine-readable kind and process exit code.
    pub fn kind(&self) -> (&'static str, i32) {
        match self {
            CliError::Usage(_) => ("usage", 2),
            CliError::MissingInput(_) => ("missing_input", 3),
            CliError::Io(_) => ("io", 9),
            CliError::Core(e) => match e {
                CoreError::Nifti { .. } | CoreError::Corrupt { .. } | CoreError::VersionMismatch { .. } => ("malformed_input", 4),
                CoreError::GeometryMismatch(_) | CoreError::InvalidGeometry(_) | CoreError::ShapeMismatch { .. } => {
                    ("geometry_mismatch", 5)
                }
                CoreError::InvalidConfig(_) | CoreError::Parse { .. } | CoreError::InvalidTransform(_) => ("invalid_config", 6),
                CoreError::EmptyMask(_)
                | CoreError::InsufficientSample { .. }
                | CoreError::EstimationFailed(_)
                | CoreError::DegenerateRange { .. }
                | CoreError::FullyWmhSlice { .. }
                | CoreError::DegenerateLabels(_)
                | CoreError::PlacementFailed { .. } => ("data_error", 7),
                CoreError::Divergence { .. } => ("divergence", 8),
                CoreError::Io(_) | CoreError::Json(_) | CoreError::Csv(_) | CoreError::Image(_) => ("io", 9),
            },
        }
    }

    /// One JSON line for stderr.
    pub fn report_line(&self) -> String {
        let (kind, code) = self.kind();
        serde_json::json!({ "error": kind, "exit_code": code, "message": self.to_string() }).to_string()
    }
}

pub type CliResult<T> = Result<T, CliError>;
