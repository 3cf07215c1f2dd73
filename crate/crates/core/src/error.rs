use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("signal too short for one frame: {n_samples} samples, need at least {min}")]
    EmptyFeatures { n_samples: usize, min: usize },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("enrollment needs 3 to 5 segments, got {0}")]
    EnrollmentCount(usize),

    #[error("zero embedding passed where a real embedding is required")]
    ZeroSentinel,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("infeasible corpus config: {0}")]
    Infeasible(String),

    #[error("wav ingestion error for {path}: {reason}")]
    Wav { path: PathBuf, reason: String },

    #[error("checkpoint error in field `{field}`: {reason}")]
    Checkpoint { field: &'static str, reason: String },

    #[error("numeric abort: {0}")]
    Numeric(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl ToString,
        got: impl ToString,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
