use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const DIVERGED: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{strategy} (lambda {lambda}) diverged at epoch {epoch} with loss {loss}")]
    Diverged {
        strategy: String,
        lambda: f64,
        epoch: usize,
        loss: f64,
    },

    #[error("report schema version {found} does not match {expected} ({path})")]
    SchemaMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error(transparent)]
    Core(#[from] entseg::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::SchemaMismatch { .. } => exit::USAGE,
            CliError::Io { .. } | CliError::Parse { .. } | CliError::Csv { .. } => exit::IO,
            CliError::Core(entseg::Error::Io(_)) => exit::IO,
            CliError::Diverged { .. } | CliError::Core(entseg::Error::Diverged { .. }) => exit::DIVERGED,
            CliError::Core(_) => exit::FAILURE,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}
