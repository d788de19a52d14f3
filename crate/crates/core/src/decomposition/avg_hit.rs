use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Partition;
use crate::error::{Error, Result};
use crate::kernel::{hitting_analysis, StationaryDistribution, StochasticKernel};

pub const EXACT_BLOCK_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AvgHitMode {
    Exact,
    Sampled { samples: usize, seed: u64 },
}

/// `max` over block sets `I` with `pi(union I) >= alpha/2` of the worst-start
/// expected hitting time of the union.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvgHitTime {
    pub value: f64,
    pub argmax: Vec<usize>,
    pub subsets_evaluated: usize,
    pub lower_bound_only: bool,
}

/// `max_x E_x[tau_{union of blocks}]`.
pub fn union_hitting_time(
    kernel: &StochasticKernel,
    partition: &Partition,
    blocks: &[usize],
) -> Result<f64> {
    let target = partition.union(blocks);
    Ok(hitting_analysis(kernel, &target, 0)?.max_expected())
}

pub fn avg_hit_time(
    kernel: &StochasticKernel,
    pi: &StationaryDistribution,
    partition: &Partition,
    alpha: f64,
    mode: AvgHitMode,
) -> Result<AvgHitTime> {
    partition.check(kernel)?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let masses = partition.block_masses(pi);
    let need = alpha / 2.0;
    let qualifies = |m: f64| m >= need - 1e-12;
    if !qualifies(masses.iter().sum()) {
        return Err(Error::NoQualifyingSet(need));
    }
    let nb = partition.n_blocks();
    match mode {
        AvgHitMode::Exact => {
            if nb > EXACT_BLOCK_LIMIT {
                return Err(Error::TooManyBlocks { got: nb, limit: EXACT_BLOCK_LIMIT });
            }
            // Hitting a larger union is faster, so the max sits on sets that
            // stop qualifying once any block is removed.
            let mut best = AvgHitTime {
                value: f64::NEG_INFINITY,
                argmax: Vec::new(),
                subsets_evaluated: 0,
                lower_bound_only: false,
            };
            let mut mass = 0.0;
            let mut gray: u32 = 0;
            for k in 1u32..(1u32 << nb) {
                let bit = k.trailing_zeros() as usize;
                gray ^= 1 << bit;
                if gray & (1 << bit) != 0 {
                    mass += masses[bit];
                } else {
                    mass -= masses[bit];
                }
                if !qualifies(mass) {
                    continue;
                }
                let members: Vec<usize> = (0..nb).filter(|&i| gray & (1 << i) != 0).collect();
                let set_mass: f64 = members.iter().map(|&i| masses[i]).sum();
                if members.iter().any(|&i| qualifies(set_mass - masses[i])) {
                    continue;
                }
                let v = union_hitting_time(kernel, partition, &members)?;
                best.subsets_evaluated += 1;
                if v > best.value {
                    best.value = v;
                    best.argmax = members;
                }
            }
            Ok(best)
        }
        AvgHitMode::Sampled { samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..nb).collect();
            let mut best = AvgHitTime {
                value: f64::NEG_INFINITY,
                argmax: Vec::new(),
                subsets_evaluated: 0,
                lower_bound_only: true,
            };
            for _ in 0..samples.max(1) {
                order.shuffle(&mut rng);
                let mut acc = 0.0;
                let mut members = Vec::new();
                for &i in &order {
                    if qualifies(acc) {
                        break;
                    }
                    acc += masses[i];
                    members.push(i);
                }
                members.sort_unstable();
                let v = union_hitting_time(kernel, partition, &members)?;
                best.subsets_evaluated += 1;
                if v > best.value {
                    best.value = v;
                    best.argmax = members;
                }
            }
            Ok(best)
        }
    }
}
