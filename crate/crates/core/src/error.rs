use thiserror::Error;

pub type Result<T, E = AdpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AdpError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ill-posed problem: {0}")]
    IllPosed(String),

    #[error("iteration did not converge after {iterations} iterations (last change {last_change:e})")]
    Divergence { iterations: usize, last_change: f64 },

    #[error("random system generation failed after {attempts} attempts")]
    GenerationFailure { attempts: usize },

    #[error("q_uu block is not positive definite (smallest eigenvalue {min_eigenvalue:e}); no policy can be extracted")]
    NonExtractable { min_eigenvalue: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AdpError {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        AdpError::DimensionMismatch {
            context,
            expected,
            got,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        AdpError::Parse {
            line,
            message: message.into(),
        }
    }
}
