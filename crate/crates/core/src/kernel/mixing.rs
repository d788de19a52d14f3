use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_reversible, StationaryDistribution, StochasticKernel};
use crate::error::{Error, Result};
use crate::tolerance::ALL_STARTS_LIMIT;

/// Worst-start total variation distances `d(t)` for `t = 0, 1, ..`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingProfile {
    pub distances: Vec<f64>,
    /// `(epsilon, tau(epsilon))`; `None` when the horizon was too short.
    pub epsilon_times: Vec<(f64, Option<u64>)>,
    pub mixing_time: Option<u64>,
    pub horizon_exceeded: bool,
    /// Set when only a subset of starts was examined, so every `d(t)` is
    /// a lower bound on the true worst-start distance.
    pub lower_bound_only: bool,
}

impl MixingProfile {
    pub fn tau(&self, epsilon: f64) -> Option<u64> {
        self.distances.iter().position(|&d| d < epsilon).map(|t| t as u64)
    }

    pub fn points(&self) -> Vec<(u64, f64)> {
        self.distances.iter().enumerate().map(|(t, &d)| (t as u64, d)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileOptions {
    pub horizon: u64,
    pub starts: Option<Vec<usize>>,
    /// Stop once `d(t)` falls below this value.
    pub stop_below: f64,
    pub epsilons: Vec<f64>,
}

impl ProfileOptions {
    pub fn new(horizon: u64) -> Self {
        Self {
            horizon,
            starts: None,
            stop_below: 0.0,
            epsilons: vec![0.5, 0.25, 0.125, 0.0625, 0.01],
        }
    }

    pub fn stop_below(mut self, v: f64) -> Self {
        self.stop_below = v;
        self
    }

    pub fn starts(mut self, starts: Vec<usize>) -> Self {
        self.starts = Some(starts);
        self
    }
}

pub fn tv_distance(mu: &[f64], nu: &[f64]) -> f64 {
    0.5 * mu.iter().zip(nu).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Exact profile from all point-mass starts; iteration ends at the horizon
/// or once the distance is below 1e-3 (past every epsilon reported).
pub fn mixing_profile(
    kernel: &StochasticKernel,
    pi: &StationaryDistribution,
    horizon: u64,
) -> Result<MixingProfile> {
    mixing_profile_with(kernel, pi, &ProfileOptions::new(horizon).stop_below(1e-3))
}

pub fn mixing_profile_with(
    kernel: &StochasticKernel,
    pi: &StationaryDistribution,
    opts: &ProfileOptions,
) -> Result<MixingProfile> {
    let n = kernel.n_states();
    if pi.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: pi.len() });
    }
    if opts.horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    if !kernel.is_irreducible() {
        return Err(Error::ReducibleKernel);
    }
    let (starts, lower_bound_only) = match &opts.starts {
        Some(s) => {
            if s.iter().any(|&x| x >= n) || s.is_empty() {
                return Err(Error::InvalidParameter("start list out of range".into()));
            }
            (s.clone(), s.len() < n)
        }
        None => {
            if n > ALL_STARTS_LIMIT {
                return Err(Error::TooLarge { got: n, limit: ALL_STARTS_LIMIT });
            }
            ((0..n).collect(), false)
        }
    };
    let w = &pi.weights;
    let mut cur = vec![0.0; starts.len() * n];
    for (k, &x) in starts.iter().enumerate() {
        cur[k * n + x] = 1.0;
    }
    let mut next = vec![0.0; cur.len()];
    let worst = |buf: &[f64]| -> f64 {
        buf.par_chunks(n).map(|mu| tv_distance(mu, w)).reduce(|| 0.0, f64::max)
    };
    let mut distances = vec![worst(&cur)];
    let mut t = 0;
    while t < opts.horizon && *distances.last().unwrap() >= opts.stop_below {
        next.par_chunks_mut(n)
            .zip(cur.par_chunks(n))
            .for_each(|(out, mu)| kernel.step_distribution(mu, out));
        std::mem::swap(&mut cur, &mut next);
        let d = worst(&cur);
        // keep the sequence monotone against rounding at the 1e-16 level
        let prev = *distances.last().unwrap();
        distances.push(d.min(prev));
        t += 1;
    }
    let tau = |eps: f64| distances.iter().position(|&d| d < eps).map(|t| t as u64);
    let epsilon_times = opts.epsilons.iter().map(|&e| (e, tau(e))).collect();
    let mixing_time = tau(0.25);
    Ok(MixingProfile {
        epsilon_times,
        mixing_time,
        horizon_exceeded: mixing_time.is_none(),
        lower_bound_only,
        distances,
    })
}

/// `1 / (1 - lambda_2)` of the symmetrised kernel.
pub fn relaxation_time(kernel: &StochasticKernel, pi: &StationaryDistribution) -> Result<f64> {
    let check = check_reversible(kernel, pi)?;
    if !check.reversible {
        return Err(Error::NotReversible(check.max_residual));
    }
    let n = kernel.n_states();
    if n == 1 {
        return Ok(1.0);
    }
    let s: Vec<f64> = pi.weights.iter().map(|w| w.sqrt()).collect();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for x in 0..n {
        for &(y, p) in kernel.support(x) {
            m[(x, y)] = s[x] * p / s[y];
        }
    }
    // average out the detailed-balance rounding so the matrix is exactly symmetric
    let m = (&m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().cloned().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let gap = 1.0 - ev[1];
    if gap <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(1.0 / gap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::stationary_distribution;
    use approx::assert_abs_diff_eq;

    #[test]
    fn one_step_coupling() {
        let k = StochasticKernel::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let pi = stationary_distribution(&k).unwrap();
        let p = mixing_profile(&k, &pi, 10).unwrap();
        assert_eq!(p.mixing_time, Some(1));
        assert_abs_diff_eq!(p.distances[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.distances[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(relaxation_time(&k, &pi).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn horizon_marker() {
        let k = StochasticKernel::from_rows(vec![vec![0.99, 0.01], vec![0.01, 0.99]]).unwrap();
        let pi = stationary_distribution(&k).unwrap();
        let p = mixing_profile(&k, &pi, 3).unwrap();
        assert!(p.horizon_exceeded);
        assert_eq!(p.mixing_time, None);
        assert_eq!(p.distances.len(), 4);
    }

    #[test]
    fn two_state_closed_form() {
        // d(t) = (1/2)(1 - 2q)^t for the symmetric flip chain with rate q
        let q = 0.1;
        let k = StochasticKernel::from_rows(vec![vec![1.0 - q, q], vec![q, 1.0 - q]]).unwrap();
        let pi = stationary_distribution(&k).unwrap();
        let p = mixing_profile_with(&k, &pi, &ProfileOptions::new(30)).unwrap();
        for (t, d) in p.distances.iter().enumerate() {
            assert_abs_diff_eq!(*d, 0.5 * (1.0 - 2.0 * q).powi(t as i32), epsilon = 1e-14);
        }
        assert_abs_diff_eq!(relaxation_time(&k, &pi).unwrap(), 1.0 / (2.0 * q), epsilon = 1e-10);
        let expected = (0..).find(|&t| 0.5 * 0.8f64.powi(t) < 0.25).unwrap() as u64;
        assert_eq!(p.mixing_time, Some(expected));
    }

    #[test]
    fn partial_starts_flagged() {
        let k = StochasticKernel::from_rows(vec![
            vec![0.5, 0.5, 0.0],
            vec![0.25, 0.5, 0.25],
            vec![0.0, 0.5, 0.5],
        ])
        .unwrap();
        let pi = stationary_distribution(&k).unwrap();
        let p = mixing_profile_with(&k, &pi, &ProfileOptions::new(50).starts(vec![1])).unwrap();
        assert!(p.lower_bound_only);
        let full = mixing_profile_with(&k, &pi, &ProfileOptions::new(50)).unwrap();
        for (a, b) in p.distances.iter().zip(&full.distances) {
            assert!(a <= b);
        }
    }

    #[test]
    fn non_reversible_rejected() {
        let k = StochasticKernel::from_rows(vec![
            vec![0.5, 0.5, 0.0],
            vec![0.0, 0.5, 0.5],
            vec![0.5, 0.0, 0.5],
        ])
        .unwrap();
        let pi = stationary_distribution(&k).unwrap();
        assert!(matches!(relaxation_time(&k, &pi), Err(Error::NotReversible(_))));
    }
}
