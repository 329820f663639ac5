use std::path::PathBuf;

use thiserror::Error;

/// Failures of a CLI command, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("numerical failure [{module}]: {source}", module = .source.module())]
    Numerical { source: wc4dvar::Error },

    #[error("{0}; use a smaller configuration (fewer grid points or steps) or raise output.dense_cap")]
    DenseCap(wc4dvar::Error),

    #[error("malformed input {path}: {message}")]
    Input { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input { .. } => 2,
            CliError::Numerical { .. } => 3,
            CliError::DenseCap(_) => 4,
            CliError::Io { .. } => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<wc4dvar::Error> for CliError {
    fn from(e: wc4dvar::Error) -> Self {
        use wc4dvar::Error as E;
        match e {
            E::DenseCapExceeded { .. } => CliError::DenseCap(e),
            E::InvalidParameter(msg) => CliError::Config(msg),
            E::NoPreviousLoop => CliError::Config(
                "the deterministic preconditioner needs a previous inner loop; set precond.loop = 2".into(),
            ),
            E::TooManyPairs { requested, available } => CliError::Config(format!(
                "requested {requested} eigenpairs but the Hessian has only {available} nontrivial ones"
            )),
            other => CliError::Numerical { source: other },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
