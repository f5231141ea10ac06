use std::path::PathBuf;

/// Errors produced by the posecraft library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("layout error: {0}")]
    Layout(String),

    #[error("reference selection failed: {0}")]
    Selection(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("affine map is singular (determinant {0:e})")]
    SingularAffine(f64),

    #[error("degenerate region: {0}")]
    DegenerateRegion(String),

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Divergence { iteration: usize, loss: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// `true` for errors caused by unreadable or malformed inputs, as opposed
    /// to well-formed inputs that violate a domain precondition.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Parse { .. } | Error::Format(_) | Error::Layout(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
