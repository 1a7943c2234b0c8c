use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("direction is not a unit vector (norm {0})")]
    NonUnitDirection(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("rejection sampling acceptance rate {rate:.3e} is below the floor {floor:.0e}")]
    AcceptanceTooLow { rate: f64, floor: f64 },

    #[error("functional kind {kind} is not defined for target {target}")]
    KindTargetMismatch { kind: String, target: String },

    #[error("scale {scale} is below the local-Lipschitz scale {psi}")]
    LldScaleViolated { scale: f64, psi: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("unknown map `{0}`")]
    UnknownMap(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
