use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema: {0}")]
    Schema(String),

    #[error("encoding: {0}")]
    Encoding(String),

    #[error("csv: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("synthesis: {0}")]
    Synthesis(String),

    #[error("model: {0}")]
    Model(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("shapley: {0}")]
    Shapley(String),

    #[error("regression system is singular ({0}); increase n_coalitions or reduce the player count")]
    SingularRegression(String),

    #[error("explanation: {0}")]
    Explain(String),

    #[error("evaluation: {0}")]
    Eval(String),
}

pub type Result<T> = std::result::Result<T, Error>;
