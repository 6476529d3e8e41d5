use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(kvbeam::Error),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("numerical failure: {0}")]
    Numerical(kvbeam::Error),

    #[error("acceptance failed for criteria {0:?}")]
    Acceptance(Vec<u8>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Acceptance(_) => 1,
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

impl From<kvbeam::Error> for CliError {
    fn from(e: kvbeam::Error) -> Self {
        use kvbeam::Error as E;
        match e {
            E::InvalidConfig(_) | E::MissingKey(_) | E::Parse { .. } => CliError::Config(e),
            E::InvalidArgument(msg) => CliError::Usage(msg),
            other => CliError::Numerical(other),
        }
    }
}
