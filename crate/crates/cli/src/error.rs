use std::fmt;
use std::path::{Path, PathBuf};

/// Failure of a CLI command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io { path: PathBuf, message: String },
    Core(dwpe::Error),
}

pub type CliResult<T> = Result<T, CliError>;

pub const EXIT_GENERIC: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

impl CliError {
    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io { .. } => EXIT_IO,
            CliError::Core(e) => match e {
                dwpe::Error::Config(_) => EXIT_CONFIG,
                dwpe::Error::Solver { .. }
                | dwpe::Error::Numerical(_)
                | dwpe::Error::UndefinedLag(_)
                | dwpe::Error::UndefinedMetric(_) => EXIT_NUMERICAL,
                _ => EXIT_GENERIC,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io { path, message } => write!(f, "{}: {message}", path.display()),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<dwpe::Error> for CliError {
    fn from(e: dwpe::Error) -> Self {
        CliError::Core(e)
    }
}
