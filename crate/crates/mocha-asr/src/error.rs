use std::path::{Path, PathBuf};

use mocha_asr_core::Error as CoreError;

/// Errors of the file formats and commands.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: truncated file ({detail})")]
    Truncated { path: PathBuf, detail: String },
    #[error("{path}: unsupported format version {found} (expected {expected})")]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid argument: {0}")]
    Usage(String),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
}

pub type AppResult<T> = Result<T, AppError>;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const CONFIG: u8 = 2;
    pub const DATA: u8 = 3;
    pub const NUMERIC: u8 = 4;
}

impl AppError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, detail: impl Into<String>) -> Self {
        AppError::Format {
            path: path.to_path_buf(),
            detail: detail.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Core(CoreError::Config(_)) | AppError::Usage(_) => exit::CONFIG,
            AppError::Core(CoreError::Divergence { .. }) | AppError::GradCheck(_) => exit::NUMERIC,
            _ => exit::DATA,
        }
    }
}
