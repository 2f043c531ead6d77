use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Parse failure; the message carries the offending line and key.
    #[error("{origin}: {msg}")]
    Config { origin: String, msg: String },
    /// A value that parses but breaks a precondition.
    #[error("{origin}: {path}: {msg}")]
    Invalid { origin: String, path: String, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },
    #[error("experiment {id}: {source}")]
    Run { id: String, source: parakernel::Error },
    #[error(transparent)]
    Library(#[from] parakernel::Error),
    #[error("serialization: {0}")]
    Serialize(String),
}

impl CliError {
    pub(crate) fn config(origin: &str, e: toml::de::Error) -> Self {
        CliError::Config { origin: origin.to_string(), msg: e.to_string().trim_end().to_string() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}
