use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid random-variable specification: {0}")]
    InvalidSpec(String),

    #[error("sample count must be at least 1")]
    EmptySample,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("design of experiment contains duplicate points ({0} and {1})")]
    DuplicatePoints(usize, usize),

    #[error("invalid design of experiment: {0}")]
    InvalidDesign(String),

    #[error("correlation matrix is not positive definite after jitter escalation (last jitter {jitter:e})")]
    SingularCorrelation { jitter: f64 },

    #[error("invalid kernel hyperparameter: {0}")]
    InvalidTheta(String),

    #[error("empty input")]
    EmptyInput,

    #[error("indicator variance is zero; correlation undefined")]
    DegenerateIndicator,

    #[error("correlation {0} outside [-1, 1]")]
    InvalidCorrelation(f64),

    #[error("internal consistency violation: {0}")]
    Consistency(String),

    #[error("every candidate is excluded")]
    AllExcluded,

    #[error("not enough candidates: need {needed}, {available} available")]
    InsufficientCandidates { needed: usize, available: usize },

    #[error("external evaluator failure: {0}")]
    ExternalEvaluator(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}
