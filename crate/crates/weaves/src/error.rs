use std::io;

use weaves_core::Error as CoreError;

pub type Result<T, E = AppError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("no convergence after {iterations} iterations")]
    NoConvergence { iterations: u64 },
    #[error("evaluation budget of {budget} exceeded")]
    BudgetExceeded { budget: u64 },
    #[error("step size underflow at t={t} (h={h})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("line {line}, column {col}: expected {expected}")]
    Parse {
        line: usize,
        col: usize,
        expected: String,
    },
    #[error("unresolved reference `{0}`")]
    UnresolvedReference(String),
    #[error("unknown query `{0}`")]
    UnknownQuery(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl AppError {
    pub fn parse(line: usize, col: usize, expected: impl Into<String>) -> AppError {
        AppError::Parse {
            line,
            col,
            expected: expected.into(),
        }
    }

    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Parse { .. } | AppError::UnresolvedReference(_) => 2,
            AppError::Core(CoreError::Unrecoverable) | AppError::Core(CoreError::AllBlocked) => 4,
            _ => 3,
        }
    }
}
