use thiserror::Error;

use crate::environment::ParticleId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },

    #[error("covariance is singular or has a non-positive real part")]
    SingularCovariance,

    #[error("step size underflow at t = {t:.6e} (h = {h:.3e}, error norm {err_norm:.3e})")]
    Stiffness { t: f64, h: f64, err_norm: f64 },

    #[error("invalid integration request: {0}")]
    InvalidIntegration(String),

    #[error("unknown particle {0:?}")]
    UnknownParticle(ParticleId),

    #[error("the system particle cannot be traced out")]
    SystemDrop,

    #[error("need at least {needed} usable points above the noise floor, found {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
}

impl Error {
    /// Short machine-readable category, used by the command line front-end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidDimension(_) | Error::DimensionMismatch { .. } => "dimension",
            Error::NonFinite { .. } => "non-finite",
            Error::SingularCovariance => "singular-covariance",
            Error::Stiffness { .. } => "stiffness",
            Error::InvalidIntegration(_) => "integration",
            Error::UnknownParticle(_) | Error::SystemDrop => "particle",
            Error::InsufficientData { .. } => "insufficient-data",
            Error::EmptyEnsemble => "empty-ensemble",
            Error::Config(e) => e.category(),
        }
    }
}
