//! Block sparse Bayesian learning with a fast marginal-likelihood solver.
//!
//! Blocks of the unknown vector enter and leave the model one at a time
//! under a Gaussian prior with a per-block covariance `γ_i B_i`. Each step
//! picks the single ADD, RE-ESTIMATE or DELETE action that lowers the
//! negative log marginal likelihood the most, updating the posterior in
//! place rather than refactoring it.

pub mod baselines;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod model;
pub mod partition;
pub mod solver;

pub use error::{BsblError, Result};
pub use model::{BlockCovariance, MeasurementSystem, Posterior};
pub use partition::BlockPartition;
pub use solver::{solve, BetaMode, CorrelationModel, RecoveryResult, SolverOptions};
