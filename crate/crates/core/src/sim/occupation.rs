use rayon::prelude::*;

use super::{replica_rng, Sampler, TailEstimate};
use crate::decomposition::Partition;
use crate::error::{Error, Result};
use crate::kernel::StochasticKernel;

pub const PRODUCT_SPACE_LIMIT: usize = 10_000_000;

/// Block occupation counts `kappa_i(T)` from independent replicas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupationSamples {
    pub horizon: u64,
    pub start: usize,
    pub seed: u64,
    /// `kappa[r][i]` for replica `r`.
    pub kappa: Vec<Vec<u32>>,
}

impl OccupationSamples {
    pub fn reps(&self) -> u64 {
        self.kappa.len() as u64
    }

    /// `P[kappa_i(T) < t for every i in blocks]`.
    pub fn joint_tail(&self, blocks: &[usize], t: u64) -> TailEstimate {
        let hits = self
            .kappa
            .iter()
            .filter(|k| blocks.iter().all(|&i| (k[i] as u64) < t))
            .count() as u64;
        TailEstimate::from_counts(hits, self.reps())
    }
}

pub fn occupation_samples<S: Sampler + ?Sized>(
    sampler: &S,
    partition: &Partition,
    x0: usize,
    horizon: u64,
    reps: u64,
    seed: u64,
) -> Result<OccupationSamples> {
    if partition.n_states() != sampler.n_states() {
        return Err(Error::DimensionMismatch {
            expected: sampler.n_states(),
            got: partition.n_states(),
        });
    }
    let nb = partition.n_blocks();
    let kappa = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r);
            let mut k = vec![0u32; nb];
            let mut x = x0;
            for _ in 0..horizon {
                x = sampler.step(x, &mut rng);
                k[partition.block_of(x)] += 1;
            }
            k
        })
        .collect();
    Ok(OccupationSamples { horizon, start: x0, seed, kappa })
}

/// Wilson-bounded estimate of `P_{x0}[kappa_i(T) < t for all i in blocks]`.
#[allow(clippy::too_many_arguments)]
pub fn empirical_occupation_tail<S: Sampler + ?Sized>(
    sampler: &S,
    partition: &Partition,
    blocks: &[usize],
    x0: usize,
    horizon: u64,
    t: u64,
    reps: u64,
    seed: u64,
) -> Result<TailEstimate> {
    if reps < 1000 {
        return Err(Error::InvalidParameter("occupation tails need reps >= 1000".into()));
    }
    if t == 0 {
        return Ok(TailEstimate::from_counts(0, reps));
    }
    if t > horizon {
        return Ok(TailEstimate::from_counts(reps, reps));
    }
    Ok(occupation_samples(sampler, partition, x0, horizon, reps, seed)?.joint_tail(blocks, t))
}

/// Exact `P_x[kappa_i(T) < t]` for every start `x`.
pub fn exact_occupation_tail(
    kernel: &StochasticKernel,
    partition: &Partition,
    block: usize,
    horizon: u64,
    t: u64,
) -> Result<Vec<f64>> {
    exact_joint_occupation_tail(kernel, partition, &[block], horizon, t)
}

/// Exact `P_x[kappa_i(T) < t for all i in blocks]` by dynamic programming
/// over (state, remaining budget per block).
pub fn exact_joint_occupation_tail(
    kernel: &StochasticKernel,
    partition: &Partition,
    blocks: &[usize],
    horizon: u64,
    t: u64,
) -> Result<Vec<f64>> {
    let n = kernel.n_states();
    if partition.n_states() != n {
        return Err(Error::DimensionMismatch { expected: n, got: partition.n_states() });
    }
    if t == 0 {
        return Ok(vec![0.0; n]);
    }
    if blocks.is_empty() || t > horizon {
        return Ok(vec![1.0; n]);
    }
    let k = blocks.len();
    let base = t as usize;
    let codes = (0..k).try_fold(1usize, |acc, _| acc.checked_mul(base));
    let codes = match codes {
        Some(c) if c.saturating_mul(n) <= PRODUCT_SPACE_LIMIT => c,
        _ => {
            return Err(Error::ProductSpaceTooLarge {
                got: base.saturating_pow(k as u32).saturating_mul(n),
                limit: PRODUCT_SPACE_LIMIT,
            })
        }
    };
    // position of each state's block within `blocks`
    let pos: Vec<Option<usize>> = (0..n)
        .map(|x| blocks.iter().position(|&b| b == partition.block_of(x)))
        .collect();
    let stride: Vec<usize> = (0..k).map(|p| base.pow(p as u32)).collect();
    // code digit d_p = r_p - 1, r_p = remaining strict budget
    let mut cur = vec![1.0f64; n * codes];
    let mut next = vec![0.0f64; n * codes];
    for _ in 0..horizon {
        next.par_chunks_mut(codes).enumerate().for_each(|(x, out)| {
            for (code, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for &(y, p) in kernel.support(x) {
                    match pos[y] {
                        None => acc += p * cur[y * codes + code],
                        Some(q) => {
                            let digit = (code / stride[q]) % base;
                            if digit > 0 {
                                acc += p * cur[y * codes + code - stride[q]];
                            }
                        }
                    }
                }
                *o = acc;
            }
        });
        std::mem::swap(&mut cur, &mut next);
    }
    let full = codes - 1;
    Ok((0..n).map(|x| cur[x * codes + full]).collect())
}
