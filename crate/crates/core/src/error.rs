use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {term}")]
    NonFinite { term: String },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("DARE iteration did not converge after {iterations} iterations (residual {residual:e})")]
    DareNotConverged { iterations: usize, residual: f64 },

    #[error("constraint is not concave (max eigenvalue {max_eigenvalue:e})")]
    NotConcave { max_eigenvalue: f64 },

    #[error("safety filter infeasible: sup g(u) = {sup_g:e}")]
    Infeasible { sup_g: f64, best_input: Vec<f64> },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format version mismatch: expected `{expected}`, found `{found}`")]
    Version { expected: String, found: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{infeasible} infeasible control steps exceed the budget of {budget}")]
    BudgetExceeded { infeasible: usize, budget: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status: 1 for configuration problems, 2 for everything
    /// that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
