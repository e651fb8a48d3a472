use thiserror::Error;

/// Errors produced by the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("numerical blowup at step {step} (t = {time})")]
    NumericalBlowup { step: usize, time: f64 },

    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Short machine-readable tag, used in JSON error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::AssumptionViolation(_) => "assumption_violation",
            Error::NumericalBlowup { .. } => "numerical_blowup",
            Error::UnsupportedRegime(_) => "unsupported_regime",
            Error::Io(_) => "io",
            Error::Config(_) => "config",
        }
    }
}
