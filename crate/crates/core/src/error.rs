use thiserror::Error;

/// Errors raised by the filtering library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid dimension {dim}: {reason}")]
    InvalidDimension { dim: usize, reason: &'static str },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("singular solve: minimum eigenvalue {min_eigenvalue:e} is not positive")]
    SingularSolve { min_eigenvalue: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("unknown increment label {0}")]
    UnknownLabel(String),

    #[error("signal grid needs at least 3 points, got {points}")]
    GridTooSmall { points: usize },

    #[error("filter blew up at step {step} (t = {time}); non-finite state, try dt < {suggested_dt:e}")]
    BlowUp { step: usize, time: f64, suggested_dt: f64 },

    #[error("degenerate trajectory: weight {weight:e} underflowed")]
    DegenerateTrajectory { weight: f64 },

    #[error("non-positive total weight {weight:e}")]
    NonPositiveWeight { weight: f64 },

    #[error("no convergence after t = {horizon}: residual {residual:e}")]
    NonConvergence { horizon: f64, residual: f64 },

    #[error("operator is not unitary: |U^dag U - I| = {deviation:e}")]
    NonUnitary { deviation: f64 },

    #[error("chain dimension {dim} exceeds the limit {limit}")]
    ChainTooLarge { dim: usize, limit: usize },

    #[error("measurement branch with probability {probability:e} cannot be sampled")]
    ZeroProbabilityBranch { probability: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
