use thiserror::Error;

/// Library-wide error type. Variants are coarse enough that callers can
/// branch on them (the CLI maps some to dedicated exit codes) while the
/// message carries the specifics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed surface: {0}")]
    MalformedSurface(String),

    #[error("surface is not connected: {0}")]
    DisconnectedSurface(String),

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    /// A search exhausted its work budget before reaching a conclusion.
    #[error("budget exceeded in {stage}: processed {processed} items")]
    BudgetExceeded { stage: String, processed: u64 },

    #[error("surface has no singularity (every vertex is regular and unmarked)")]
    NoSingularity,

    #[error("direction is not periodic: {0}")]
    NonPeriodicDirection(String),

    #[error("period chart construction failed: {0}")]
    ChartConstruction(String),

    #[error("period charts do not match: {0}")]
    ChartMismatch(String),

    #[error("vector outside the chart's exponential domain: {0}")]
    ExpDomain(String),

    #[error("degenerate symplectic form: {0}")]
    DegenerateForm(String),

    #[error("could not classify matrix: {0}")]
    Classification(String),

    /// A driver precondition does not hold for the requested inputs.
    #[error("precondition unmet: {0}")]
    PreconditionUnmet(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid_parameter(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn budget(stage: impl Into<String>, processed: u64) -> Self {
        Error::BudgetExceeded {
            stage: stage.into(),
            processed,
        }
    }
}
