use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] mialab_core::Error),

    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// Input file contents that do not parse.
    #[error("{0}")]
    Format(String),

    #[error("{} already exists (pass --force to overwrite)", .0.display())]
    OutputExists(PathBuf),

    #[error("{0}")]
    Mismatch(String),

    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable class printed as `error[class]: ...`.
    pub fn class(&self) -> &'static str {
        use mialab_core::Error as E;
        match self {
            CliError::Core(e) => match e {
                E::Shape(_) | E::InvalidArgument(_) | E::Empty(_) | E::IndexOutOfRange { .. } => "invalid",
                E::Format(_) | E::UnsupportedVersion { .. } | E::Csv(_) => "format",
                E::FingerprintMismatch { .. } => "fingerprint",
                E::BudgetExhausted(_) => "budget",
                E::Io { .. } => "io",
            },
            CliError::Config(_) | CliError::Json { .. } => "config",
            CliError::Io { .. } => "io",
            CliError::Format(_) => "format",
            CliError::OutputExists(_) => "exists",
            CliError::Mismatch(_) => "mismatch",
            CliError::Usage(_) => "usage",
        }
    }

    /// Exit status for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}
