use thiserror::Error;

/// Errors raised by model construction, sampling and verification.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("node budget of {budget} exceeded at depth {depth} (frontier size {frontier_size})")]
    Budget {
        budget: usize,
        depth: usize,
        frontier_size: usize,
        /// Partial sum accumulated before the budget was hit.
        partial_value: f64,
    },

    #[error("refused: {0}")]
    Refused(String),

    #[error("model schema: {0}")]
    Schema(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
