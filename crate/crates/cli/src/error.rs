use std::path::PathBuf;

use stcar::ErrorClass;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("cannot read config {}: {source}", path.display())]
    ConfigRead {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid config {}: {source}", path.display())]
    ConfigParse {
        path: PathBuf,
        #[source]
        source: Box<toml::de::Error>,
    },

    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] stcar::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::ConfigRead { .. } | CliError::ConfigParse { .. } => 1,
            CliError::Write { .. } => 2,
            CliError::Core(e) => match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            },
        }
    }

    /// A follow-up line pointing at the likely fix.
    pub fn hint(&self) -> Option<String> {
        match self {
            CliError::Core(stcar::Error::Io { path, .. }) => Some(format!(
                "check that {path} exists, or point the [data] section of the config (or --counts/--area/--adjacency) at the right file"
            )),
            CliError::Core(stcar::Error::Parse { path, .. }) => {
                Some(format!("fix the offending row of {path}; see the README for the expected columns"))
            }
            CliError::ConfigParse { .. } => Some("run `stcar <command> --print-config` for a complete example".into()),
            _ => None,
        }
    }
}
