//! Decomposition-based analysis of finite reversible Markov chains.
//!
//! Builds trace and projected chains from a kernel and a partition of its
//! state space, computes exact mixing, hitting and occupation quantities,
//! and evaluates decomposition bounds on mixing times.

pub mod bounds;
pub mod contraction;
pub mod decomposition;
pub mod error;
pub mod kernel;
pub mod report;
pub mod sim;
pub mod tolerance;
pub mod wellcover;
pub mod zoo;

pub use error::{Error, Result};
pub use decomposition::Partition;
pub use kernel::{StationaryDistribution, StochasticKernel};
