use thiserror::Error;

/// Errors raised by the solvers and evaluators.
///
/// The variants map onto the process exit codes used by the command line
/// tool: configuration problems, numerical failures and threshold-structure
/// violations are kept apart so CI can tell them apart.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid input. `field` is a dotted path into the configuration
    /// (or the argument name for in-process calls).
    #[error("invalid configuration at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("configuration parse error at line {line}, column {column}: {reason}")]
    Parse {
        line: usize,
        column: usize,
        reason: String,
    },

    #[error("fixed-point iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    /// A policy slice that is not a threshold (prefix/suffix) set.
    #[error("threshold structure violated at {context}: slice {slice:?}")]
    StructureViolation { context: String, slice: Vec<u8> },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Stable process exit code: 2 configuration, 3 numerical,
    /// 4 structure violation, 1 anything else (I/O, internal).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Parse { .. } => 2,
            Error::NonConvergence { .. } | Error::Numerical(_) => 3,
            Error::StructureViolation { .. } => 4,
            Error::Internal(_) | Error::Csv(_) | Error::Io(_) => 1,
        }
    }
}
