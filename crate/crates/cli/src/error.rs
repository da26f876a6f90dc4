use std::path::PathBuf;

use hermit_core::HermitError;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
    #[error("checkpoint version: {0}")]
    Version(String),
    #[error("{failed} of {total} prediction rows failed")]
    Partial { failed: usize, total: usize },
    #[error(transparent)]
    Core(#[from] HermitError),
}

/// Process exit codes. Clap itself exits with 2 on usage errors.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INTERNAL: i32 = 1;
    pub const IO: i32 = 3;
    pub const SCHEMA: i32 = 4;
    pub const VERSION: i32 = 5;
    pub const PARTIAL: i32 = 6;
    pub const CONFIG: i32 = 7;
    pub const TRAINING: i32 = 8;
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Io { .. } => exit::IO,
            Self::Config(_) => exit::CONFIG,
            Self::Checkpoint(_) => exit::SCHEMA,
            Self::Version(_) => exit::VERSION,
            Self::Partial { .. } => exit::PARTIAL,
            Self::Core(e) => match e {
                HermitError::Io(_) => exit::IO,
                HermitError::CorruptInput { .. } | HermitError::Schema(_) | HermitError::UnknownNode(_) => exit::SCHEMA,
                HermitError::InvalidArgument(_) | HermitError::Infeasible(_) => exit::CONFIG,
                HermitError::Divergence(_) | HermitError::DegenerateRange(_) | HermitError::CompleteGraph => {
                    exit::TRAINING
                }
                HermitError::State(_) | HermitError::UndefinedMetric(_) => exit::INTERNAL,
            },
        }
    }
}
