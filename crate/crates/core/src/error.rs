use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("vector must have at least one component")]
    EmptyVector,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("at least two tasks are required, got {0}")]
    TooFewTasks(usize),

    #[error("expected exactly {expected} tasks, got {found}")]
    TaskCount { expected: usize, found: usize },

    #[error("cosine similarity is undefined for a zero-norm gradient")]
    ZeroNorm,

    #[error("magnitude similarity is undefined when both gradients are zero")]
    BothZero,

    #[error("all task gradients are zero")]
    AllZeroGradients,

    #[error("single-task baseline for task {task} is zero")]
    ZeroBaseline { task: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error("problem `{0}` is unavailable")]
    ProblemUnavailable(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn non_finite(what: impl Into<String>) -> Self {
        Error::NonFinite(what.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    /// True for errors caused by a bad configuration rather than a failed run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::UnknownProblem(_)
                | Error::UnknownMethod(_)
                | Error::ProblemUnavailable(_)
                | Error::Parse(_)
        )
    }
}
