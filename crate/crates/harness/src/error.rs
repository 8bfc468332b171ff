use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] grl::Error),
    #[error("seed {seed}, t = {t}: {source}")]
    Trajectory {
        seed: u64,
        t: usize,
        source: grl::Error,
    },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_PROPERTY: i32 = 4;

impl HarnessError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        HarnessError::Invalid(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn core(&self) -> Option<&grl::Error> {
        match self {
            HarnessError::Core(e) | HarnessError::Trajectory { source: e, .. } => Some(e),
            _ => None,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match (self, self.core()) {
            (HarnessError::Invalid(_), _) => EXIT_INVALID,
            (_, Some(grl::Error::BudgetExceeded { .. })) => EXIT_BUDGET,
            (_, Some(grl::Error::InvalidSpec(_))) => EXIT_INVALID,
            _ => EXIT_FAILURE,
        }
    }
}
