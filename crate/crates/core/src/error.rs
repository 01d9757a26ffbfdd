use thiserror::Error;

use crate::analysis::FitResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates the documented domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("visibility undefined: total central-bin power is zero")]
    UndefinedVisibility,

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    /// Power-to-path inversion left the principal arcsin branch.
    #[error("fringe saturated at sample {index}: arcsin argument {argument}")]
    Saturation { index: usize, argument: f64 },

    /// The optimizer ran out of iterations; the best parameters seen are attached.
    #[error("fit did not converge after {iterations} iterations")]
    Convergence {
        iterations: usize,
        best: Box<FitResult>,
    },

    #[error("interval {interval}: {source}")]
    Interval {
        interval: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("cascade construction check failed: {0}")]
    CascadeMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Config(_) | Error::CascadeMismatch(_) => 2,
            Error::UndefinedVisibility
            | Error::UndefinedCorrelation(_)
            | Error::Saturation { .. }
            | Error::Convergence { .. } => 3,
            Error::Interval { source, .. } => source.exit_code(),
            Error::Parse { .. } | Error::Io(_) => 4,
        }
    }
}
