use thiserror::Error;

pub type Result<T> = std::result::Result<T, SwingError>;

#[derive(Debug, Error)]
pub enum SwingError {
    /// A numeric argument lies outside the set where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid contract, model, solver or experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: String, got: String },

    /// A simulated state became NaN or infinite.
    #[error("non-finite state on path {path} at step {step}")]
    NonFinite { path: usize, step: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("scenario `{scenario}`: {source}")]
    Scenario {
        scenario: String,
        #[source]
        source: Box<SwingError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl SwingError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        SwingError::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        SwingError::Config(msg.into())
    }

    /// True for errors caused by the user's input rather than by the numerics.
    pub fn is_config(&self) -> bool {
        match self {
            SwingError::Config(_) | SwingError::Domain(_) | SwingError::Dimension { .. } => true,
            SwingError::Scenario { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
