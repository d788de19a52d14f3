//! Seeded Monte Carlo: trajectories, occupation records, empirical tails.
//!
//! Every replica draws from its own ChaCha8 stream `(seed, replica)`, so
//! results are identical whatever the thread count.

mod occupation;
mod stats;
mod trajectory;

pub use occupation::{
    empirical_occupation_tail, exact_joint_occupation_tail, exact_occupation_tail,
    occupation_samples, OccupationSamples, PRODUCT_SPACE_LIMIT,
};
pub use stats::{mean_and_se, wilson_interval, TailEstimate, Z99};
pub use trajectory::{read_trajectory, write_trajectory};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::Partition;
use crate::error::{Error, Result};
use crate::kernel::StochasticKernel;

pub type SimRng = ChaCha8Rng;

/// Independent stream `replica` of the generator seeded by `seed`.
pub fn replica_rng(seed: u64, replica: u64) -> SimRng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(replica);
    r
}

/// One-step transition sampler over states `0..n_states()`.
pub trait Sampler: Sync {
    fn n_states(&self) -> usize;
    fn step(&self, x: usize, rng: &mut SimRng) -> usize;
}

enum RowSampler {
    Fixed(usize),
    Cdf(Vec<usize>, Vec<f64>),
    Alias(Vec<usize>, WeightedAliasIndex<f64>),
}

/// Exact sampler for an explicit kernel: alias tables for rows with more
/// than eight nonzeros, inverse CDF otherwise.
pub struct KernelSampler {
    rows: Vec<RowSampler>,
}

impl KernelSampler {
    pub fn new(kernel: &StochasticKernel) -> Self {
        let rows = (0..kernel.n_states())
            .map(|x| {
                let sup = kernel.support(x);
                if sup.len() == 1 {
                    return RowSampler::Fixed(sup[0].0);
                }
                let targets: Vec<usize> = sup.iter().map(|e| e.0).collect();
                if sup.len() > 8 {
                    let w: Vec<f64> = sup.iter().map(|e| e.1).collect();
                    let alias = WeightedAliasIndex::new(w).expect("valid row weights");
                    RowSampler::Alias(targets, alias)
                } else {
                    let mut acc = 0.0;
                    let cdf = sup
                        .iter()
                        .map(|e| {
                            acc += e.1;
                            acc
                        })
                        .collect();
                    RowSampler::Cdf(targets, cdf)
                }
            })
            .collect();
        Self { rows }
    }
}

impl Sampler for KernelSampler {
    fn n_states(&self) -> usize {
        self.rows.len()
    }

    fn step(&self, x: usize, rng: &mut SimRng) -> usize {
        match &self.rows[x] {
            RowSampler::Fixed(y) => *y,
            RowSampler::Cdf(targets, cdf) => {
                let u: f64 = rng.random::<f64>() * cdf[cdf.len() - 1];
                let k = cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1);
                targets[k]
            }
            RowSampler::Alias(targets, alias) => targets[alias.sample(rng)],
        }
    }
}

/// Per-trajectory counters with `kappa_i(T) = #{1 <= u <= T : X_u in Omega_i}`
/// and `transitions[i * n + j] = #{1 <= s <= T : X_{s-1} in Omega_i, X_s in Omega_j}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupationRecord {
    pub horizon: u64,
    pub start: usize,
    pub kappa: Vec<u64>,
    pub transitions: Vec<u64>,
}

impl OccupationRecord {
    pub fn n_blocks(&self) -> usize {
        self.kappa.len()
    }

    pub fn n_ij(&self, i: usize, j: usize) -> u64 {
        self.transitions[i * self.kappa.len() + j]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub record: OccupationRecord,
}

pub fn simulate<S: Sampler + ?Sized>(
    sampler: &S,
    partition: &Partition,
    x0: usize,
    horizon: u64,
    seed: u64,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    if partition.n_states() != sampler.n_states() || x0 >= sampler.n_states() {
        return Err(Error::DimensionMismatch {
            expected: sampler.n_states(),
            got: partition.n_states(),
        });
    }
    let nb = partition.n_blocks();
    let mut rng = replica_rng(seed, 0);
    let mut states = Vec::with_capacity(horizon as usize + 1);
    let mut kappa = vec![0u64; nb];
    let mut transitions = vec![0u64; nb * nb];
    let mut x = x0;
    states.push(x);
    for _ in 0..horizon {
        let y = sampler.step(x, &mut rng);
        let (bi, bj) = (partition.block_of(x), partition.block_of(y));
        kappa[bj] += 1;
        transitions[bi * nb + bj] += 1;
        states.push(y);
        x = y;
    }
    Ok(Trajectory {
        states,
        record: OccupationRecord { horizon, start: x0, kappa, transitions },
    })
}

/// Monte Carlo hitting time of `target` from `x0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub reps: u64,
    /// Replicates stopped at the step cap (their value is the cap).
    pub truncated: u64,
    pub samples: Vec<u64>,
}

impl HittingEstimate {
    /// `P[tau_A > t]` with its Wilson interval.
    pub fn tail(&self, t: u64) -> TailEstimate {
        let c = self.samples.iter().filter(|&&s| s > t).count() as u64;
        TailEstimate::from_counts(c, self.reps)
    }
}

pub const HITTING_STEP_CAP: u64 = 1_000_000_000;

pub fn empirical_hitting<S: Sampler + ?Sized>(
    sampler: &S,
    target: &[usize],
    x0: usize,
    reps: u64,
    seed: u64,
) -> Result<HittingEstimate> {
    if reps < 100 {
        return Err(Error::InvalidParameter("empirical_hitting needs reps >= 100".into()));
    }
    let n = sampler.n_states();
    let mut in_target = vec![false; n];
    for &a in target {
        in_target[a] = true;
    }
    if target.is_empty() {
        return Err(Error::UnreachableTarget(x0));
    }
    let samples: Vec<u64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r);
            let mut x = x0;
            let mut t = 0u64;
            while !in_target[x] && t < HITTING_STEP_CAP {
                x = sampler.step(x, &mut rng);
                t += 1;
            }
            t
        })
        .collect();
    let truncated = samples.iter().filter(|&&s| s >= HITTING_STEP_CAP).count() as u64;
    let (mean, se) = mean_and_se(&samples);
    Ok(HittingEstimate {
        mean,
        std_error: se,
        ci_low: mean - Z99 * se,
        ci_high: mean + Z99 * se,
        reps,
        truncated,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_state() -> StochasticKernel {
        StochasticKernel::from_rows(vec![
            vec![0.5, 0.5, 0.0],
            vec![0.25, 0.5, 0.25],
            vec![0.0, 0.5, 0.5],
        ])
        .unwrap()
    }

    #[test]
    fn one_state_chain_counts_every_step() {
        let k = StochasticKernel::from_rows(vec![vec![1.0]]).unwrap();
        let s = KernelSampler::new(&k);
        let tr = simulate(&s, &Partition::single_block(1), 0, 50, 1).unwrap();
        assert_eq!(tr.record.kappa, vec![50]);
        assert_eq!(tr.record.transitions, vec![50]);
    }

    #[test]
    fn determinism_and_conservation() {
        let k = three_state();
        let s = KernelSampler::new(&k);
        let p = Partition::new(vec![0, 0, 1]).unwrap();
        let a = simulate(&s, &p, 2, 1000, 9).unwrap();
        let b = simulate(&s, &p, 2, 1000, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.record.kappa.iter().sum::<u64>(), 1000);
        assert_eq!(a.record.transitions.iter().sum::<u64>(), 1000);
        let c = simulate(&s, &p, 2, 1000, 10).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn hitting_mean_matches_exact() {
        let k = three_state();
        let s = KernelSampler::new(&k);
        let e = empirical_hitting(&s, &[0], 2, 20_000, 5).unwrap();
        assert!(e.ci_low <= 8.0 && 8.0 <= e.ci_high, "{e:?}");
        let z = empirical_hitting(&s, &[0], 0, 100, 5).unwrap();
        assert!(z.samples.iter().all(|&v| v == 0));
    }

    #[test]
    fn alias_rows_sample_correct_law() {
        let n = 12;
        let mut rows = vec![vec![0.0; n]; n];
        for (x, row) in rows.iter_mut().enumerate() {
            let tot: f64 = (1..=n).map(|v| v as f64).sum();
            for (y, v) in row.iter_mut().enumerate() {
                *v = ((x + y) % n + 1) as f64 / tot;
            }
        }
        let k = StochasticKernel::from_rows(rows).unwrap();
        let s = KernelSampler::new(&k);
        let mut rng = replica_rng(1, 0);
        let reps = 200_000;
        let mut counts = vec![0u64; n];
        for _ in 0..reps {
            counts[s.step(3, &mut rng)] += 1;
        }
        for y in 0..n {
            let e = TailEstimate::from_counts(counts[y], reps);
            assert!(e.contains(k.get(3, y)), "state {y}: {e:?} vs {}", k.get(3, y));
        }
    }
}
