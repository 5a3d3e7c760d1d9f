use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("non-mean-reverting configuration: 2|a| <= c, leverage decay time undefined")]
    NonMeanReverting,
    #[error("stationary moment of order {order} diverges (requires order < nu = {nu})")]
    DivergentMoment { order: u32, nu: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("quadrature step {step} too large relative to kernel scale {scale}")]
    StepTooLarge { step: f64, scale: f64 },
    #[error("recovery constraint violated ({equation}): {reason}")]
    RecoveryConstraint { equation: &'static str, reason: String },
    #[error("calibration stage '{stage}' failed: {cause}")]
    CalibrationStage { stage: &'static str, cause: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
