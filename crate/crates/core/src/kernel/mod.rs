//! Finite Markov kernels and their exact analysis.
//!
//! A [`StochasticKernel`] is stored densely (row-major) together with a
//! sparse view of each row's support, which is what the iterative routines
//! (mixing profiles, hitting-time tails, occupation DPs) walk over.

mod hitting;
pub mod io;
pub(crate) mod linalg;
mod mixing;

pub use hitting::{hitting_analysis, HittingTimeTable};
pub use mixing::{
    mixing_profile, mixing_profile_with, relaxation_time, tv_distance, MixingProfile,
    ProfileOptions,
};

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tolerance::{Tolerances, DENSE_LIMIT, DIRECT_SOLVE_LIMIT};

/// A row-stochastic transition matrix on `{0, .., n-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticKernel {
    n: usize,
    data: Vec<f64>,
    sparse: Vec<Vec<(usize, f64)>>,
    labels: Option<Vec<String>>,
}

impl StochasticKernel {
    /// Builds a kernel from a row-major buffer, validating nonnegativity and
    /// row sums. Entries in `(-1e-15, 0)` are treated as rounding noise and
    /// clamped to zero.
    pub fn from_dense(n: usize, mut data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidKernel("kernel needs at least one state".into()));
        }
        if n > DENSE_LIMIT {
            return Err(Error::TooLarge { got: n, limit: DENSE_LIMIT });
        }
        if data.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, got: data.len() });
        }
        let tol = Tolerances::DEFAULT.stochasticity;
        for x in 0..n {
            let row = &mut data[x * n..(x + 1) * n];
            let mut sum = 0.0;
            for (y, v) in row.iter_mut().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidKernel(format!("non-finite entry at ({x},{y})")));
                }
                if *v < 0.0 {
                    if *v > -1e-15 {
                        *v = 0.0;
                    } else {
                        return Err(Error::InvalidKernel(format!(
                            "negative entry {v} at ({x},{y})"
                        )));
                    }
                }
                sum += *v;
            }
            if (sum - 1.0).abs() > tol {
                return Err(Error::InvalidKernel(format!("row {x} sums to {sum}")));
            }
        }
        let sparse = (0..n)
            .map(|x| {
                data[x * n..(x + 1) * n]
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v > 0.0)
                    .map(|(y, &v)| (y, v))
                    .collect()
            })
            .collect();
        Ok(Self { n, data, sparse, labels: None })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, r) in rows.into_iter().enumerate() {
            if r.len() != n {
                return Err(Error::InvalidKernel(format!(
                    "row {i} has {} entries, expected {n}",
                    r.len()
                )));
            }
            data.extend(r);
        }
        Self::from_dense(n, data)
    }

    /// Builds a kernel from off-diagonal entries; each diagonal is filled so
    /// the row sums to one.
    pub fn from_off_diagonal(n: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let mut data = vec![0.0; n * n];
        for &(x, y, p) in entries {
            if x >= n || y >= n {
                return Err(Error::InvalidKernel(format!("entry ({x},{y}) out of range")));
            }
            if x != y {
                data[x * n + y] += p;
            }
        }
        for x in 0..n {
            let off: f64 = (0..n).filter(|&y| y != x).map(|y| data[x * n + y]).sum();
            if off > 1.0 + Tolerances::DEFAULT.stochasticity {
                return Err(Error::InvalidKernel(format!(
                    "row {x} has off-diagonal mass {off} > 1"
                )));
            }
            data[x * n + x] = (1.0 - off).max(0.0);
        }
        Self::from_dense(n, data)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: labels.len() });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[x * self.n + y]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.data[x * self.n..(x + 1) * self.n]
    }

    /// Nonzero entries of row `x` as `(column, probability)`.
    pub fn support(&self, x: usize) -> &[(usize, f64)] {
        &self.sparse[x]
    }

    pub fn dense(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|x| self.row(x).to_vec()).collect()
    }

    /// `mu K` for a row vector `mu`.
    pub fn step_distribution(&self, mu: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (x, &m) in mu.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for &(y, p) in &self.sparse[x] {
                out[y] += m * p;
            }
        }
    }

    /// `K f` for a column vector `f`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|x| self.sparse[x].iter().map(|&(y, p)| p * f[y]).sum())
            .collect()
    }

    pub fn min_diagonal(&self) -> f64 {
        (0..self.n).map(|x| self.get(x, x)).fold(f64::INFINITY, f64::min)
    }

    /// True when every diagonal entry is at least 1/2.
    pub fn is_half_lazy(&self) -> bool {
        self.min_diagonal() >= 0.5 - Tolerances::DEFAULT.stochasticity
    }

    /// States reachable from `sources` along positive-probability edges.
    pub fn reachable_from(&self, sources: &[usize]) -> Vec<bool> {
        let mut seen = vec![false; self.n];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for &s in sources {
            if !seen[s] {
                seen[s] = true;
                queue.push_back(s);
            }
        }
        while let Some(x) = queue.pop_front() {
            for &(y, _) in &self.sparse[x] {
                if !seen[y] {
                    seen[y] = true;
                    queue.push_back(y);
                }
            }
        }
        seen
    }

    /// States that can reach some state of `targets`.
    pub fn can_reach(&self, targets: &[usize]) -> Vec<bool> {
        let mut rev: Vec<Vec<usize>> = vec![Vec::new(); self.n];
        for x in 0..self.n {
            for &(y, _) in &self.sparse[x] {
                rev[y].push(x);
            }
        }
        let mut seen = vec![false; self.n];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for &t in targets {
            if !seen[t] {
                seen[t] = true;
                queue.push_back(t);
            }
        }
        while let Some(y) = queue.pop_front() {
            for &x in &rev[y] {
                if !seen[x] {
                    seen[x] = true;
                    queue.push_back(x);
                }
            }
        }
        seen
    }

    /// Strong connectivity of the support digraph.
    pub fn is_irreducible(&self) -> bool {
        self.reachable_from(&[0]).iter().all(|&b| b) && self.can_reach(&[0]).iter().all(|&b| b)
    }
}

/// The stationary law of an irreducible kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDistribution {
    pub weights: Vec<f64>,
}

impl StationaryDistribution {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite())
            || (sum - 1.0).abs() > Tolerances::DEFAULT.stochasticity
        {
            return Err(Error::InvalidParameter(format!(
                "weights are not a probability vector (sum {sum})"
            )));
        }
        Ok(Self { weights })
    }

    pub fn uniform(n: usize) -> Self {
        Self { weights: vec![1.0 / n as f64; n] }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mass(&self, states: &[usize]) -> f64 {
        states.iter().map(|&x| self.weights[x]).sum()
    }

    pub fn min(&self) -> f64 {
        self.weights.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// `|| pi K - pi ||_1`.
    pub fn fixed_point_residual(&self, kernel: &StochasticKernel) -> f64 {
        let mut out = vec![0.0; kernel.n_states()];
        kernel.step_distribution(&self.weights, &mut out);
        out.iter().zip(&self.weights).map(|(a, b)| (a - b).abs()).sum()
    }
}

pub fn stationary_distribution(kernel: &StochasticKernel) -> Result<StationaryDistribution> {
    if !kernel.is_irreducible() {
        return Err(Error::ReducibleKernel);
    }
    let n = kernel.n_states();
    let mut pi = if n <= DIRECT_SOLVE_LIMIT {
        linalg::solve_stationary(kernel)?
    } else {
        power_iteration(kernel)
    };
    for w in pi.iter_mut() {
        if *w < 0.0 {
            *w = 0.0;
        }
    }
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|w| *w /= s);
    let dist = StationaryDistribution { weights: pi };
    let res = dist.fixed_point_residual(kernel);
    if res > Tolerances::DEFAULT.linear_solve {
        return Err(Error::SingularSystem(format!("stationary residual {res:.3e}")));
    }
    Ok(dist)
}

fn power_iteration(kernel: &StochasticKernel) -> Vec<f64> {
    let n = kernel.n_states();
    let mut mu = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..10_000_000 {
        kernel.step_distribution(&mu, &mut next);
        // Half-lazy averaging removes periodicity without moving the fixed point.
        for (a, b) in next.iter_mut().zip(&mu) {
            *a = 0.5 * (*a + *b);
        }
        let diff: f64 = next.iter().zip(&mu).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut mu, &mut next);
        if diff < Tolerances::DEFAULT.power_iteration {
            break;
        }
    }
    mu
}

/// Result of a detailed-balance check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReversibilityCheck {
    pub reversible: bool,
    pub max_residual: f64,
}

pub fn check_reversible(
    kernel: &StochasticKernel,
    pi: &StationaryDistribution,
) -> Result<ReversibilityCheck> {
    let n = kernel.n_states();
    if pi.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: pi.len() });
    }
    let w = &pi.weights;
    let mut worst: f64 = 0.0;
    for x in 0..n {
        for y in (x + 1)..n {
            let r = (w[x] * kernel.get(x, y) - w[y] * kernel.get(y, x)).abs();
            worst = worst.max(r);
        }
    }
    Ok(ReversibilityCheck {
        reversible: worst <= Tolerances::DEFAULT.detailed_balance,
        max_residual: worst,
    })
}

/// `alpha K + (1 - alpha) Id`.
pub fn lazify(kernel: &StochasticKernel, alpha: f64) -> Result<StochasticKernel> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let n = kernel.n_states();
    let mut data: Vec<f64> = kernel.dense().iter().map(|v| alpha * v).collect();
    for x in 0..n {
        data[x * n + x] += 1.0 - alpha;
    }
    let k = StochasticKernel::from_dense(n, data)?;
    Ok(match kernel.labels() {
        Some(l) => k.with_labels(l.to_vec())?,
        None => k,
    })
}

/// `K*(x,y) = pi(y) K(y,x) / pi(x)`.
pub fn time_reversal(
    kernel: &StochasticKernel,
    pi: &StationaryDistribution,
) -> Result<StochasticKernel> {
    let n = kernel.n_states();
    if pi.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: pi.len() });
    }
    let w = &pi.weights;
    let mut data = vec![0.0; n * n];
    for x in 0..n {
        for y in 0..n {
            data[x * n + y] = w[y] * kernel.get(y, x) / w[x];
        }
        // absorb the solver's rounding so the row validates
        let s: f64 = data[x * n..(x + 1) * n].iter().sum();
        data[x * n..(x + 1) * n].iter_mut().for_each(|v| *v /= s);
    }
    StochasticKernel::from_dense(n, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn three_state() -> StochasticKernel {
        StochasticKernel::from_rows(vec![
            vec![0.5, 0.5, 0.0],
            vec![0.25, 0.5, 0.25],
            vec![0.0, 0.5, 0.5],
        ])
        .unwrap()
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(StochasticKernel::from_rows(vec![vec![0.5, 0.4], vec![0.5, 0.5]]).is_err());
        assert!(StochasticKernel::from_rows(vec![vec![1.5, -0.5], vec![0.5, 0.5]]).is_err());
        assert!(StochasticKernel::from_rows(vec![]).is_err());
    }

    #[test]
    fn stationary_two_state_symmetric() {
        let k = StochasticKernel::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let pi = stationary_distribution(&k).unwrap();
        assert_abs_diff_eq!(pi.weights[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(pi.weights[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn stationary_three_state() {
        let pi = stationary_distribution(&three_state()).unwrap();
        for (a, b) in pi.weights.iter().zip([0.25, 0.5, 0.25]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn reducible_kernel_is_rejected() {
        let k = StochasticKernel::from_rows(vec![vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        assert_eq!(stationary_distribution(&k), Err(Error::ReducibleKernel));
    }

    #[test]
    fn reversibility_hand_example() {
        let k = StochasticKernel::from_rows(vec![vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap();
        let pi = StationaryDistribution::new(vec![5.0 / 6.0, 1.0 / 6.0]).unwrap();
        let c = check_reversible(&k, &pi).unwrap();
        assert!(c.reversible);
        assert!(c.max_residual < 1e-15);
        let bad = StationaryDistribution::new(vec![0.5, 0.5]).unwrap();
        assert!(!check_reversible(&k, &bad).unwrap().reversible);
        let short = StationaryDistribution::new(vec![1.0]).unwrap();
        assert!(matches!(
            check_reversible(&k, &short),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn lazify_cases() {
        let flip = StochasticKernel::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let half = lazify(&flip, 0.5).unwrap();
        assert_eq!(half.to_rows(), vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert_eq!(lazify(&flip, 1.0).unwrap(), flip);
        assert_eq!(lazify(&flip, 0.0), Err(Error::InvalidAlpha(0.0)));
        assert_eq!(lazify(&flip, 1.5), Err(Error::InvalidAlpha(1.5)));
        let k = lazify(&three_state(), 0.3).unwrap();
        assert!(k.min_diagonal() >= 0.7 - 1e-15);
    }

    #[test]
    fn time_reversal_of_reversible_is_identity() {
        let k = three_state();
        let pi = stationary_distribution(&k).unwrap();
        let r = time_reversal(&k, &pi).unwrap();
        for (a, b) in r.dense().iter().zip(k.dense()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }
}
