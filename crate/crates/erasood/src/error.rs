use std::io;
use std::path::PathBuf;

/// Exit code for malformed configuration or unreadable inputs.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code when training diverges.
pub const EXIT_DIVERGED: i32 = 3;
/// Exit code when an output cannot be written.
pub const EXIT_OUTPUT: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: {source}", path.display())]
    Input {
        path: PathBuf,
        #[source]
        source: erasood_core::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Core(#[from] erasood_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(erasood_core::Error::Diverged { .. }) => EXIT_DIVERGED,
            Error::Write { .. } => EXIT_OUTPUT,
            _ => EXIT_CONFIG,
        }
    }

    /// The underlying core error, when there is one.
    pub fn core(&self) -> Option<&erasood_core::Error> {
        match self {
            Error::Core(e) | Error::Input { source: e, .. } => Some(e),
            _ => None,
        }
    }
}
