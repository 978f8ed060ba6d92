use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A state or input vector contained NaN or infinity.
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// An argument lies outside the domain where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// The linear pullback rate is too small for the decay constants to exist.
    #[error("lambda = {lambda} does not exceed the threshold Lambda = {threshold}")]
    ThresholdNotMet { lambda: f64, threshold: f64 },

    #[error("path diverged at step {step}")]
    Diverged { step: usize },

    /// The model does not provide the Jacobian fields needed for derivative flows.
    #[error("model `{0}` does not provide coefficient Jacobians")]
    MissingJacobians(String),

    #[error("pullback depth {depth} is too shallow; at least {required} is required")]
    InsufficientDepth { depth: f64, required: f64 },

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
