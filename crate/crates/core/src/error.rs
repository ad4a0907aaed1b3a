use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed input; `line` is 1-based and counts the header.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Syntactically valid input that violates a domain invariant.
    #[error("domain error at line {line}: {message}")]
    Domain { line: usize, message: String },

    #[error("stratum {key} is not estimable: {reason}")]
    Estimability { key: String, reason: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("incomplete table: missing {term}")]
    Incomplete { term: String },

    #[error("ambiguous pattern: {0}")]
    Ambiguity(String),

    #[error("no group of the pattern matches stratum {0}")]
    Coverage(String),

    #[error(
        "net effect vector is not identifiable: rank {rank} < k = {k}; null space basis {null_space:?}"
    )]
    Identifiability {
        rank: usize,
        k: usize,
        null_space: Vec<Vec<f64>>,
    },

    #[error("data-generating spec error at line {line}: {message}")]
    Spec { line: usize, message: String },

    #[error("diagnostic error: {0}")]
    Diagnostic(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 1 for input/usage problems, 2 for statistical
    /// estimability or identifiability failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Estimability { .. }
            | Error::Incomplete { .. }
            | Error::Identifiability { .. }
            | Error::Diagnostic(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}
