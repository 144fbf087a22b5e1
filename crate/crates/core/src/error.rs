use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-summable system: {0}")]
    NonSummable(String),

    #[error("fixed-point iteration did not converge after {iterations} iterations (last change {last_change:e})")]
    NoConvergence { iterations: usize, last_change: f64 },

    #[error("step size underflow at t = {t} (h = {h:e})")]
    Stiffness { t: f64, h: f64 },

    #[error("non-finite state encountered at t = {t}")]
    NonFinite { t: f64 },

    #[error("jump at t = {0} does not coincide with a grid node")]
    GridMismatch(f64),

    #[error("trajectory leaves the tube of radius {gamma} (distance {distance:e} at t = {t})")]
    RadiusExceeded { gamma: f64, distance: f64, t: f64 },

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("incomplete verification: missing {0}")]
    IncompleteVerification(String),

    #[error("horizon too short: T = {horizon} gives switching time {tau} <= 0")]
    HorizonTooShort { horizon: f64, tau: f64 },

    #[error("resource stock {x0} exceeds U(tau) = {reached} at the probe cap tau = {cap}")]
    ResourceTooLarge { x0: f64, reached: f64, cap: f64 },

    #[error("unknown scenario `{0}`")]
    NotFound(String),

    #[error("schema mismatch in column `{column}`: {reason}")]
    Schema { column: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
