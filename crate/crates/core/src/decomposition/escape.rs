use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::Partition;
use crate::error::{Error, Result};
use crate::kernel::{linalg, StochasticKernel};

/// Escape-time law of one block, `tau_esc = min{t > 0 : X_t not in Omega_i}`.
/// Per-state vectors follow the block's member order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeStatistics {
    pub block: usize,
    pub states: Vec<usize>,
    pub expected_escape: Vec<f64>,
    /// `escape_tail[t][k] = P_{x_k}[tau_esc > t]`, `t = 0..=horizon`.
    pub escape_tail: Vec<Vec<f64>>,
    /// `exit_block_distribution[k][j] = P_{x_k}[X_{tau_esc} in Omega_j]`.
    pub exit_block_distribution: Vec<Vec<f64>>,
}

impl EscapeStatistics {
    pub fn min_tail(&self, t: usize) -> f64 {
        self.escape_tail[t].iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_tail(&self, t: usize) -> f64 {
        self.escape_tail[t].iter().cloned().fold(0.0, f64::max)
    }

    /// `min_x P_x[X_{tau_esc} in Omega_j]`.
    pub fn min_exit_to(&self, j: usize) -> f64 {
        self.exit_block_distribution
            .iter()
            .map(|r| r[j])
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn escape_analysis(
    kernel: &StochasticKernel,
    partition: &Partition,
    block: usize,
    horizon: u64,
) -> Result<EscapeStatistics> {
    partition.check(kernel)?;
    if block >= partition.n_blocks() {
        return Err(Error::InvalidPartition(format!("no block {block}")));
    }
    let a = partition.members(block).to_vec();
    let n = kernel.n_states();
    let nb = partition.n_blocks();
    let outside: Vec<usize> = (0..n).filter(|&x| partition.block_of(x) != block).collect();
    if outside.is_empty() {
        return Err(Error::NoExit(block));
    }
    let reach = kernel.can_reach(&outside);
    if a.iter().any(|&x| !reach[x]) {
        return Err(Error::NoExit(block));
    }
    let mut local = vec![usize::MAX; n];
    for (k, &x) in a.iter().enumerate() {
        local[x] = k;
    }
    // column 0: expected escape; columns 1..=nb: one-step exit mass per block
    let mut rhs = DMatrix::<f64>::zeros(a.len(), nb + 1);
    for (r, &x) in a.iter().enumerate() {
        rhs[(r, 0)] = 1.0;
        for &(y, p) in kernel.support(x) {
            let j = partition.block_of(y);
            if j != block {
                rhs[(r, 1 + j)] += p;
            }
        }
    }
    let sol = linalg::absorbing_solve(kernel, &a, rhs)?;
    let expected_escape: Vec<f64> = (0..a.len()).map(|r| sol[(r, 0)]).collect();
    let exit_block_distribution: Vec<Vec<f64>> = (0..a.len())
        .map(|r| {
            let mut row: Vec<f64> = (0..nb).map(|j| sol[(r, 1 + j)].max(0.0)).collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            row
        })
        .collect();

    let mut escape_tail = Vec::with_capacity(horizon as usize + 1);
    let mut cur = vec![1.0; a.len()];
    escape_tail.push(cur.clone());
    for _ in 0..horizon {
        let next: Vec<f64> = a
            .iter()
            .map(|&x| {
                kernel
                    .support(x)
                    .iter()
                    .filter(|(y, _)| local[*y] != usize::MAX)
                    .map(|&(y, p)| p * cur[local[y]])
                    .sum()
            })
            .collect();
        escape_tail.push(next.clone());
        cur = next;
    }
    Ok(EscapeStatistics {
        block,
        states: a,
        expected_escape,
        escape_tail,
        exit_block_distribution,
    })
}
