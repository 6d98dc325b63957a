use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dyadic level {level} exceeds the supported maximum {max}")]
    LevelOverflow { level: u32, max: u32 },

    #[error("position {position} is out of range for level {level}")]
    InvalidPosition { level: u32, position: u64 },

    #[error("resolution {level} is too large for dense storage (limit {limit})")]
    Capacity { level: u32, limit: u32 },

    #[error("exponent p = {0} is outside [1, inf)")]
    InvalidExponent(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("intervals {0} and {1} are not disjoint")]
    NotDisjoint(String, String),

    #[error("collection for {0} is empty")]
    EmptyCollection(String),

    #[error("collection check failed: {0}")]
    Compatibility(String),

    #[error("indices must differ for an off-diagonal variable (got {0} twice)")]
    SameIndex(String),

    #[error("enumeration needs {coordinates} coordinates, above the cap {cap}; use Monte Carlo")]
    EnumerationCap { coordinates: usize, cap: usize },

    #[error("insufficient separation: {0}")]
    InsufficientSeparation(String),

    #[error("matrix is singular or ill-conditioned (condition number {0:e})")]
    IllConditioned(f64),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown operator generator `{0}`")]
    UnknownGenerator(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
