use std::path::PathBuf;

/// Failures of a batch run, each tied to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),

    #[error("admissibility error: {0}")]
    Admissibility(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Admissibility(_) => 3,
            RunError::Numerical(_) => 4,
            RunError::Io { .. } | RunError::Format { .. } => 5,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RunError::Io { path: path.into(), source }
    }

    /// Core errors raised while building inputs from a config.
    pub(crate) fn setup(e: passim_core::error::Error) -> Self {
        match e {
            passim_core::error::Error::Admissibility(m) => RunError::Admissibility(m),
            other => RunError::Config(other.to_string()),
        }
    }
}

/// Core errors raised while a task runs.
impl From<passim_core::error::Error> for RunError {
    fn from(e: passim_core::error::Error) -> Self {
        match e {
            passim_core::error::Error::Admissibility(m) => RunError::Admissibility(m),
            other => RunError::Numerical(other.to_string()),
        }
    }
}

pub type Result<T, E = RunError> = std::result::Result<T, E>;
