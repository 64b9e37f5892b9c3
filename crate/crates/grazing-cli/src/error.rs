//! CLI errors and their exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable, malformed or out-of-domain configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// At least one check failed.
    #[error("check failure: {0}")]
    Check(String),
    /// An iteration or time stepper blew up.
    #[error("numerical divergence: {0}")]
    Divergence(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Lib(grazing::Error),
}

impl From<grazing::Error> for CliError {
    fn from(e: grazing::Error) -> Self {
        match e {
            grazing::Error::Config(_) | grazing::Error::Domain(_) => CliError::Config(e.to_string()),
            grazing::Error::Divergence(_) | grazing::Error::Numerical(_) => CliError::Divergence(e.to_string()),
            other => CliError::Lib(other),
        }
    }
}

impl CliError {
    /// `0` pass, `1` check failure, `2` configuration error, `3` divergence.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Check(_) | CliError::Io(_) | CliError::Lib(_) => 1,
        }
    }
}
