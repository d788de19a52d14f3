//! Numerical tolerances shared by every analysis routine.

use serde::{Deserialize, Serialize};

/// One place for every threshold the library checks against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Row sums must equal 1 within this.
    pub stochasticity: f64,
    /// Residual accepted from a direct linear solve.
    pub linear_solve: f64,
    /// Max |pi(x)K(x,y) - pi(y)K(y,x)|.
    pub detailed_balance: f64,
    /// Eigenvalue comparisons.
    pub eigen: f64,
    /// Power-iteration stopping criterion for large stationary solves.
    pub power_iteration: f64,
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances {
        stochasticity: 1e-9,
        linear_solve: 1e-8,
        detailed_balance: 1e-9,
        eigen: 1e-10,
        power_iteration: 1e-12,
    };
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Size above which the stationary solve switches from LU to power iteration.
pub const DIRECT_SOLVE_LIMIT: usize = 5_000;
/// Largest state space held as a dense matrix.
pub const DENSE_LIMIT: usize = 50_000;
/// Above this size the mixing profile requires an explicit start list.
pub const ALL_STARTS_LIMIT: usize = 2_000;
