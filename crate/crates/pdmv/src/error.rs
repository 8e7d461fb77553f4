use std::io;
use std::path::{Path, PathBuf};

use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Core(#[from] pdmv_core::Error),

    #[error("{0}")]
    Usage(String),

    #[error("output directory {} is locked by another run", .0.display())]
    Locked(PathBuf),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, message: impl ToString) -> Self {
        CliError::Format { path: path.to_path_buf(), message: message.to_string() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Format { .. } => "format",
            CliError::Core(e) => match e {
                pdmv_core::Error::InvalidArgument(_) => "invalid_argument",
                pdmv_core::Error::DimensionMismatch { .. } => "dimension_mismatch",
                pdmv_core::Error::DivergedTrajectory { .. } => "diverged_trajectory",
                pdmv_core::Error::IllConditionedBasis { .. } => "ill_conditioned_basis",
                pdmv_core::Error::InsufficientSamples { .. } => "insufficient_samples",
                pdmv_core::Error::DegenerateFit { .. } => "degenerate_fit",
                pdmv_core::Error::EmptyDataset(_) => "empty_dataset",
            },
            CliError::Usage(_) => "usage",
            CliError::Locked(_) => "locked",
        }
    }

    pub fn path(&self) -> Option<&Path> {
        match self {
            CliError::Io { path, .. } | CliError::Format { path, .. } | CliError::Locked(path) => Some(path),
            _ => None,
        }
    }

    /// One-line machine-readable form printed on stderr by the binary.
    pub fn to_json(&self) -> String {
        let mut v = json!({ "error": self.kind(), "message": self.to_string() });
        if let Some(p) = self.path() {
            v["path"] = json!(p.display().to_string());
        }
        v.to_string()
    }
}
