use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("backward called on an empty tape")]
    EmptyTape,

    #[error("backward requires a scalar output, got a {0}x{1} node")]
    NonScalarOutput(usize, usize),

    #[error("numerical instability: {0}")]
    NumericalInstability(String),

    #[error("non-finite state: {0:?}")]
    NonFiniteState([f64; 4]),

    #[error("policy returned non-finite action {action} at step {step}")]
    NonFiniteAction { step: usize, action: f64 },

    #[error("rollout diverged at step {step}")]
    DivergedRollout { step: usize },

    #[error("loss diverged at horizon {horizon}")]
    DivergedLoss { horizon: usize },

    #[error("singular error ratio: one-step error is zero for window {window}")]
    SingularRatio { window: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("horizon {horizon} is not a multiple of the model horizon {model_horizon}")]
    NonDivisibleHorizon { horizon: usize, model_horizon: usize },

    #[error("horizon {horizon} exceeds shortest episode length {shortest}")]
    HorizonTooLong { horizon: usize, shortest: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable snake_case name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::EmptyTape => "empty_tape",
            Error::NonScalarOutput(..) => "non_scalar_output",
            Error::NumericalInstability(_) => "numerical_instability",
            Error::NonFiniteState(_) => "non_finite_state",
            Error::NonFiniteAction { .. } => "non_finite_action",
            Error::DivergedRollout { .. } => "diverged_rollout",
            Error::DivergedLoss { .. } => "diverged_loss",
            Error::SingularRatio { .. } => "singular_ratio",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NonDivisibleHorizon { .. } => "non_divisible_horizon",
            Error::HorizonTooLong { .. } => "horizon_too_long",
            Error::Parse { .. } => "parse",
            Error::Version { .. } => "version",
            Error::TrainingDiverged { .. } => "training_diverged",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
