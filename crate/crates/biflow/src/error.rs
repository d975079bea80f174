use thiserror::Error;

/// Everything that can go wrong across the crate. Numerical experiments are
/// expected to fail loudly: a violated precondition is a bug in the caller or
/// in the data, never something to paper over.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid: {0}")]
    Grid(String),

    #[error("config parse error at line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("stencil error (grid too coarse): {0}")]
    Stencil(String),

    #[error("invalid boundary data: {0}")]
    BoundaryData(String),

    #[error("sphere constraint violated: {0}")]
    Constraint(String),

    #[error("precondition not met: {0}")]
    Precondition(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("kernel singularity: {0}")]
    Singularity(String),

    #[error("snapshot format error at byte {offset}: {msg}")]
    SnapshotFormat { offset: u64, msg: String },

    #[error("flow stagnated at t = {t:.6e} (30 consecutive step rejections, dt = {dt:.3e}, energy = {energy:.6e})")]
    Stagnation { t: f64, dt: f64, energy: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
