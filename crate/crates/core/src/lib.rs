//! Continuous nondemolition measurement and quantum filtering of an open
//! system driven by a diffusive classical signal.
//!
//! The crate integrates the linear (unnormalized) and normalized filtering
//! equations on a grid in the signal variable, and carries three independent
//! references: a Kalman-Riccati filter for the linear-Gaussian oscillator, an
//! exact repeated-interaction dilation, and a moment-generating ODE.
//!
//! Noise index conventions are documented in [`noise`].

pub mod dilation;
pub mod error;
pub mod filter;
pub mod generator;
pub mod kalman;
pub mod noise;
pub mod operator;
pub mod rng;
pub mod signal;
pub mod stats;
pub mod truth;

pub use error::{Error, Result};
pub use filter::{FilterMode, FilterRun, Observable, TrajectoryRecord};
pub use generator::{apply_generator, apply_heisenberg, delta, delta2, lindblad, FieldState, SystemModel};
pub use kalman::{KalmanParams, KalmanState};
pub use noise::{geometric_mean, ito_product, sample_increments, standard_theta, IncrementLabel, ItoTable, NoiseSpec};
pub use operator::{build_oscillator, commutator, jordan_solve, DensityOperator, Operator, C64};
pub use rng::{trajectory_stream, SeedProvenance};
pub use signal::{Coupling, Drift, Grid, SignalModel};
