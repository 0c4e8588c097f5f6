use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("unknown mode {0}")]
    UnknownMode(usize),

    #[error("invalid certificate: {0}")]
    CertificateInvalid(String),

    #[error("dwell time {tau_d} does not exceed log(mu)/kappa = {bound}")]
    DwellTooSmall { tau_d: f64, bound: f64 },

    #[error("eta = {eta} exceeds the admissible bound {eta_max} ({bound})")]
    Budget {
        eta: f64,
        eta_max: f64,
        bound: &'static str,
    },

    #[error("label alphabets differ: {0} vs {1}")]
    LabelMismatch(usize, usize),

    #[error("state {0} is uncontrollable")]
    Uncontrollable(usize),

    #[error("relation violated at step {step}: V = {value} exceeds level {level}")]
    RelationViolation { step: usize, value: f64, level: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
