use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// No feasible lattice path reaches the planning frontier.
    #[error("planner stalled at path sample {sample}: {reason}")]
    PlannerStall { sample: usize, reason: String },

    #[error("solver failure after {iterations} iterations: {reason}")]
    SolverFailure { iterations: usize, reason: String },

    /// A report was requested over data with nothing to aggregate.
    #[error("empty report: {0}")]
    EmptyReport(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
