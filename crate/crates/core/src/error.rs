use std::path::PathBuf;

/// Errors raised by every module of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("variable `{0}` is unobserved across the whole cohort; no global mean exists")]
    UnobservedVariable(String),

    #[error("embedding row {0} has zero norm; cosine similarity is undefined")]
    ZeroNormEmbedding(usize),

    #[error("semantic loss requested but the model is not conditional")]
    NotConditional,

    #[error("conditional mismatch: {0}")]
    ConditionalMismatch(String),

    #[error("non-finite loss term `{term}` during {stage} at step {step}")]
    NonFiniteLoss {
        term: String,
        stage: &'static str,
        step: usize,
    },

    #[error("empty sample: {0}")]
    EmptySample(&'static str),

    #[error("not enough samples: {0}")]
    TooFewSamples(String),

    #[error("ratio {0} is outside [0, 1]")]
    InvalidRatio(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("model bundle has no parameter `{0}`")]
    MissingParam(String),

    #[error("noise multiplier is zero, epsilon is infinite")]
    InfiniteEpsilon,

    #[error("malformed input {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. })
    }
}
