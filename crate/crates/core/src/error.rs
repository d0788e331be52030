use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("need at least {required} particles, got {found}")]
    InsufficientParticles { required: usize, found: usize },

    #[error("degenerate ensemble: median pairwise distance is zero")]
    DegenerateEnsemble,

    #[error("matrix is not positive definite (pivot {index} = {pivot:e})")]
    NotSpd { index: usize, pivot: f64 },

    #[error("conjugate gradient did not converge: relative residual {residual:e}")]
    MaxIterExceeded { residual: f64 },

    #[error("matrix order {n} exceeds eigensolver cap {cap}")]
    EigenCapExceeded { n: usize, cap: usize },

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("schedule exhausted: {needed} iterations requested, {available} values available")]
    ScheduleExhausted { needed: usize, available: usize },

    #[error("step {step} lost positive definiteness; reduce the step size")]
    StepTooLarge { step: usize },

    #[error("degenerate schedule: S equals Q, the Fisher ratio is undefined")]
    DegenerateSchedule,

    #[error("invalid schedule at step {step}: contraction factor {factor} is not positive")]
    ScheduleInvalid { step: usize, factor: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("step {iteration} failed: {source}")]
    StepFailed {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    #[cfg_attr(not(feature = "harness"), allow(dead_code))]
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
