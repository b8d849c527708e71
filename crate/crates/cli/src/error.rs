use std::path::{Path, PathBuf};

use thiserror::Error;

/// Process exit status when a stage's self-check (e.g. prior validation) fails.
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_PARSE: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// An input file could not be parsed.
    #[error("malformed input {}: {message}", path.display())]
    Input { path: PathBuf, message: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Library(#[from] infosep::Error),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn input(path: &Path, message: impl ToString) -> Self {
        CliError::Input {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        use infosep::Error as E;
        match self {
            CliError::Config(_) | CliError::Input { .. } => EXIT_PARSE,
            CliError::Io { .. } => EXIT_IO,
            CliError::Library(e) => match e {
                E::Parameter(_) | E::Dimension(_) | E::Format(_) | E::Json(_) => EXIT_PARSE,
                E::Singular(_) | E::Domain(_) | E::Model(_) => EXIT_NUMERICAL,
                E::Io(_) => EXIT_IO,
            },
        }
    }

    pub fn category(&self) -> &'static str {
        match self.exit_code() {
            EXIT_PARSE => "parse",
            EXIT_NUMERICAL => "numerical",
            _ => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
