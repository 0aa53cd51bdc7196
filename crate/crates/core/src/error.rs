//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("range {0} m lies outside the sweep delay window")]
    RangeOutOfSweep(f64),

    #[error("bin {bin} out of range for {n_bins} bins")]
    BinOutOfRange { bin: usize, n_bins: usize },

    #[error("range {0} m is below the minimum resolvable range")]
    ZeroRange(f64),

    #[error("angular offset {offset} rad outside half-FOV {half_fov} rad")]
    OffsetOutOfFov { offset: f64, half_fov: f64 },

    #[error("point ({0:.3}, {1:.3}, {2:.3}) outside the supported bounds")]
    OutOfBounds(f64, f64, f64),

    #[error("direction is not a unit vector (norm {0})")]
    NotUnitVector(f64),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("degenerate configuration: {0}")]
    DegenerateConfig(String),

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("zero radiation-pattern weight sum")]
    ZeroWeightSum,

    #[error("non-finite gradient encountered at parameter index {0}")]
    NonFiniteGradient(usize),

    #[error("empty frame sequence")]
    EmptySequence,

    #[error("empty point set")]
    EmptySet,

    #[error("voxel grid of {requested} cells exceeds the budget of {budget}")]
    MemoryBudgetExceeded { requested: usize, budget: usize },

    #[error("bad magic bytes")]
    BadMagic,

    #[error("unsupported format version {0}")]
    VersionMismatch(u16),

    #[error("corrupt or truncated file: {0}")]
    CorruptHeader(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}
