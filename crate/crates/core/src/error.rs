use thiserror::Error;

/// Errors produced by the simulation and estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("parameters lie outside the normal phase (stability margin {margin:.3e} >= 0)")]
    Unstable { margin: f64 },

    #[error("relaxation did not converge within t_max = {t_max} (residual {residual:.3e})")]
    NotConverged { t_max: f64, residual: f64 },

    #[error("simulation failed at step {step}: {reason}")]
    SimulationFailure { step: usize, reason: String },

    #[error("filter aborted at step {step} after {restarts} restarts")]
    TooManyRestarts { step: usize, restarts: usize },

    #[error("singular linear system: {0}")]
    Singular(&'static str),

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("degenerate histogram: all samples are identical")]
    DegenerateHistogram,

    #[error("record format error: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
