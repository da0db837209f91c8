use thiserror::Error;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("seminorm order {0} is not supported (expected 0, 1 or 2)")]
    UnsupportedOrder(u32),

    #[error("coupling {0} lies outside [0, 1]")]
    InvalidCoupling(f64),

    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),

    #[error("time grid is not strictly increasing at index {0}")]
    NonMonotoneTimes(usize),

    #[error("step {step} is outside a path with {steps} steps")]
    StepOutOfRange { step: usize, steps: usize },

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("slow cluster is not usable: {0}")]
    SlowCluster(String),

    #[error("numerical instability at step {step}: {detail}")]
    Unstable { step: usize, detail: String },

    #[error("coupling constraints violated by {0:e}")]
    Constraint(f64),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("invalid sweep: {0}")]
    Sweep(String),

    #[error("ensemble member {member} (seed {seed}, stream {stream}) failed: {source}")]
    Member {
        member: usize,
        seed: u64,
        stream: u64,
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed data: {0}")]
    Format(String),
}

impl Error {
    /// True for failures caused by the numerics rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Eigen(_) | Error::Unstable { .. } | Error::Constraint(_) => true,
            Error::SlowCluster(_) => true,
            Error::Member { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
