use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] aerotree_core::Error),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CliError>,
    },
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Process exit status for configuration problems.
pub const EXIT_CONFIG: i32 = 2;
/// Process exit status for unreadable or invalid data.
pub const EXIT_DATA: i32 = 3;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use aerotree_core::Error as E;
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(E::Parameter(_) | E::Spec(_)) => EXIT_CONFIG,
            CliError::Data(_) | CliError::Write { .. } => EXIT_DATA,
            CliError::Stage { source, .. } => source.exit_code(),
        }
    }

    pub fn write(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Write {
            path: path.into(),
            source,
        }
    }

    /// Tags a failure with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        CliError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
