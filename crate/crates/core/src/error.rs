use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("CFL violation: dt = {dt:e} exceeds the stable limit {limit:e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("value {value} leaves the velocity window [{min}, {max}]")]
    XiWindow { value: f64, min: f64, max: f64 },

    #[error("time step underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("path resolution: level {level} needs {needed} intervals but the path has {available}")]
    PathResolution {
        level: u32,
        needed: usize,
        available: usize,
    },

    #[error("degenerate flux: sublevel measure does not shrink with eps ({0})")]
    DegenerateFlux(String),

    #[error("sublevel measure vanishes at every eps; the velocity window misses the support")]
    EmptySublevel,

    #[error("envelope check failed: measure {measure:e} exceeds iota({eps:e}) = {bound:e}")]
    UnverifiedEnvelope { eps: f64, measure: f64, bound: f64 },

    #[error("integration window too small: tail estimate {tail:e} exceeds tolerance {tolerance:e}")]
    WindowTooSmall { tail: f64, tolerance: f64 },

    #[error("field has non-zero mean {0:e}")]
    NonZeroMean(f64),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
