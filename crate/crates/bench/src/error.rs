use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("{context}: {source}")]
    Solver {
        context: String,
        #[source]
        source: wmlr::Error,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{failed} of {total} checks failed")]
    ChecksFailed { failed: usize, total: usize },
}

impl HarnessError {
    /// Process exit code: 1 validation, 2 solver or I/O failure, 3 failed checks.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Validation(_) => 1,
            HarnessError::Solver { .. } | HarnessError::Io { .. } => 2,
            HarnessError::ChecksFailed { .. } => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) trait SolverContext<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T> SolverContext<T> for wmlr::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| match source {
            wmlr::Error::InvalidParameter(m) => HarnessError::Validation(m),
            source => HarnessError::Solver { context: what(), source },
        })
    }
}
