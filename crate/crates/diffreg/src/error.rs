use std::path::{Path, PathBuf};

use thiserror::Error;

/// Exit status for usage and configuration errors.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for I/O and file-format failures.
pub const EXIT_IO: i32 = 3;
/// Exit status for numerical failures.
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Core(#[from] diffreg_core::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, reason: impl ToString) -> Self {
        Self::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        use diffreg_core::Error as E;
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Io { .. } | Self::Format { .. } => EXIT_IO,
            Self::Core(
                E::NonFiniteInput
                | E::NonFiniteNoise
                | E::ZeroMassInput
                | E::DegenerateConfiguration
                | E::DegenerateAlphaBar(_),
            ) => EXIT_NUMERIC,
            Self::Core(_) => EXIT_USAGE,
        }
    }
}
