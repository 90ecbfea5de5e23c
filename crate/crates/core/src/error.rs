use thiserror::Error;

/// Errors produced by the solvers and the problem-spec loader.
#[derive(Debug, Error)]
pub enum Error {
    /// A value failed validation. `field` names the offending field and index.
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },

    #[error("alphabet mismatch: {0}")]
    AlphabetMismatch(String),

    /// An iterative method hit its iteration cap.
    #[error("{what} did not converge after {iterations} iterations (last gap {last_gap:e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        last_gap: f64,
    },

    /// The requested construction does not apply to this problem
    /// (empty lambda-feasibility set, infinite D_max, ...).
    #[error("inapplicable: {0}")]
    Inapplicable(String),

    #[error("distortion {value} outside the feasible range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A pipeline stage failed; wraps the underlying error.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through `Stage` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
