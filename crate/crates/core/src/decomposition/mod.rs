//! Trace and projected chains of a partitioned kernel.

mod avg_hit;
mod escape;

pub use avg_hit::{avg_hit_time, union_hitting_time, AvgHitMode, AvgHitTime, EXACT_BLOCK_LIMIT};
pub use escape::{escape_analysis, EscapeStatistics};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{
    linalg, mixing_profile, stationary_distribution, StationaryDistribution, StochasticKernel,
};

/// A surjective assignment of states to blocks `0..n_blocks`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    block_of: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(block_of: Vec<usize>) -> Result<Self> {
        if block_of.is_empty() {
            return Err(Error::InvalidPartition("no states".into()));
        }
        let n_blocks = block_of.iter().max().unwrap() + 1;
        let mut members = vec![Vec::new(); n_blocks];
        for (x, &b) in block_of.iter().enumerate() {
            members[b].push(x);
        }
        if let Some(i) = members.iter().position(|m| m.is_empty()) {
            return Err(Error::InvalidPartition(format!("block {i} is empty")));
        }
        Ok(Self { block_of, members })
    }

    pub fn from_blocks(n_states: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut block_of = vec![usize::MAX; n_states];
        for (i, b) in blocks.iter().enumerate() {
            if b.is_empty() {
                return Err(Error::InvalidPartition(format!("block {i} is empty")));
            }
            for &x in b {
                if x >= n_states {
                    return Err(Error::InvalidPartition(format!("state {x} out of range")));
                }
                if block_of[x] != usize::MAX {
                    return Err(Error::InvalidPartition(format!("state {x} in two blocks")));
                }
                block_of[x] = i;
            }
        }
        if let Some(x) = block_of.iter().position(|&b| b == usize::MAX) {
            return Err(Error::InvalidPartition(format!("state {x} is not covered")));
        }
        Self::new(block_of)
    }

    pub fn single_block(n_states: usize) -> Self {
        Self::new(vec![0; n_states]).expect("nonempty")
    }

    pub fn n_states(&self) -> usize {
        self.block_of.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.members.len()
    }

    pub fn block_of(&self, x: usize) -> usize {
        self.block_of[x]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.block_of
    }

    pub fn members(&self, i: usize) -> &[usize] {
        &self.members[i]
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.members
    }

    /// States of the union of the given blocks.
    pub fn union(&self, blocks: &[usize]) -> Vec<usize> {
        let mut v: Vec<usize> = blocks.iter().flat_map(|&i| self.members[i].iter().copied()).collect();
        v.sort_unstable();
        v
    }

    pub fn block_masses(&self, pi: &StationaryDistribution) -> Vec<f64> {
        self.members.iter().map(|m| pi.mass(m)).collect()
    }

    pub fn check(&self, kernel: &StochasticKernel) -> Result<()> {
        if self.n_states() != kernel.n_states() {
            return Err(Error::DimensionMismatch {
                expected: kernel.n_states(),
                got: self.n_states(),
            });
        }
        Ok(())
    }
}

/// Partition file: one `state block` pair per line, `#` comments allowed.
pub fn parse_partition(text: &str) -> Result<Partition> {
    let mut pairs = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let bad = |msg: &str| Error::Parse { line: no + 1, msg: msg.to_string() };
        if toks.len() != 2 {
            return Err(bad("expected `state block`"));
        }
        let x: usize = toks[0].parse().map_err(|_| bad("bad state index"))?;
        let b: usize = toks[1].parse().map_err(|_| bad("bad block index"))?;
        pairs.push((x, b));
    }
    let n = pairs.len();
    let mut block_of = vec![usize::MAX; n];
    for (x, b) in pairs {
        if x >= n || block_of[x] != usize::MAX {
            return Err(Error::InvalidPartition(format!("state {x} missing or repeated")));
        }
        block_of[x] = b;
    }
    Partition::new(block_of)
}

pub fn format_partition(p: &Partition) -> String {
    p.block_of.iter().enumerate().map(|(x, b)| format!("{x} {b}\n")).collect()
}

/// The chain watched only while in block `i`:
/// `K_AA + K_AB (I - K_BB)^{-1} K_BA` with `A` the block and `B` its complement.
pub fn trace_kernel(
    kernel: &StochasticKernel,
    partition: &Partition,
    block: usize,
) -> Result<StochasticKernel> {
    partition.check(kernel)?;
    if block >= partition.n_blocks() {
        return Err(Error::InvalidPartition(format!("no block {block}")));
    }
    let a = partition.members(block);
    trace_on(kernel, a).map_err(|e| match e {
        Error::SingularSystem(_) => Error::SingularReturn(block),
        other => other,
    })
}

/// Trace on an arbitrary nonempty state set.
pub fn trace_on(kernel: &StochasticKernel, a: &[usize]) -> Result<StochasticKernel> {
    let n = kernel.n_states();
    let mut in_a = vec![false; n];
    for &x in a {
        in_a[x] = true;
    }
    let b: Vec<usize> = (0..n).filter(|&x| !in_a[x]).collect();
    let na = a.len();
    let mut local_a = vec![usize::MAX; n];
    for (k, &x) in a.iter().enumerate() {
        local_a[x] = k;
    }
    let mut out = vec![0.0; na * na];
    for (r, &x) in a.iter().enumerate() {
        for &(y, p) in kernel.support(x) {
            if in_a[y] {
                out[r * na + local_a[y]] += p;
            }
        }
    }
    if !b.is_empty() {
        let reach = kernel.can_reach(a);
        if b.iter().any(|&y| !reach[y]) {
            return Err(Error::SingularSystem("complement cannot return".into()));
        }
        let mut local_b = vec![usize::MAX; n];
        for (k, &y) in b.iter().enumerate() {
            local_b[y] = k;
        }
        let mut rhs = DMatrix::<f64>::zeros(b.len(), na);
        for (r, &y) in b.iter().enumerate() {
            for &(z, p) in kernel.support(y) {
                if in_a[z] {
                    rhs[(r, local_a[z])] += p;
                }
            }
        }
        // X[y, a'] = P_y[first entry into A is at a']
        let x = linalg::absorbing_solve(kernel, &b, rhs)?;
        for (r, &s) in a.iter().enumerate() {
            for &(y, p) in kernel.support(s) {
                let c = local_b[y];
                if c == usize::MAX {
                    continue;
                }
                for k in 0..na {
                    out[r * na + k] += p * x[(c, k)];
                }
            }
        }
    }
    for r in 0..na {
        let row = &mut out[r * na..(r + 1) * na];
        row.iter_mut().for_each(|v| *v = v.max(0.0));
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    let k = StochasticKernel::from_dense(na, out)?;
    match kernel.labels() {
        Some(l) => k.with_labels(a.iter().map(|&x| l[x].clone()).collect()),
        None => Ok(k),
    }
}

/// `Kbar(i,j) = pi(Omega_i)^{-1} sum_{x in Omega_i, y in Omega_j} pi(x) K(x,y)`.
pub fn projected_kernel(
    kernel: &StochasticKernel,
    pi: &StationaryDistribution,
    partition: &Partition,
) -> Result<StochasticKernel> {
    partition.check(kernel)?;
    if pi.len() != kernel.n_states() {
        return Err(Error::DimensionMismatch { expected: kernel.n_states(), got: pi.len() });
    }
    let nb = partition.n_blocks();
    let mut flow = vec![0.0; nb * nb];
    for x in 0..kernel.n_states() {
        let i = partition.block_of(x);
        for &(y, p) in kernel.support(x) {
            flow[i * nb + partition.block_of(y)] += pi.weights[x] * p;
        }
    }
    for i in 0..nb {
        let row = &mut flow[i * nb..(i + 1) * nb];
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    StochasticKernel::from_dense(nb, flow)
}

/// Off-diagonal entries rescaled so every row has exactly 1/2 off-diagonal mass.
pub fn less_lazy_projection(projected: &StochasticKernel) -> Result<StochasticKernel> {
    let n = projected.n_states();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        let stay = projected.get(i, i);
        let off = 1.0 - stay;
        if off <= 0.0 {
            return Err(Error::AbsorbingBlock(i));
        }
        for j in 0..n {
            if j != i {
                data[i * n + j] = projected.get(i, j) / (2.0 * off);
            }
        }
        data[i * n + i] = 0.5;
    }
    StochasticKernel::from_dense(n, data)
}

/// Everything the decomposition bounds consume.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    pub blocks: Vec<Vec<usize>>,
    pub trace_kernels: Vec<StochasticKernel>,
    pub projected: StochasticKernel,
    pub block_masses: Vec<f64>,
    /// Mixing time of each trace kernel.
    pub block_mixing_times: Vec<u64>,
    pub phi_max: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionSummary {
    pub blocks: Vec<Vec<usize>>,
    pub masses: Vec<f64>,
    pub phi_i: Vec<u64>,
    pub phi_max: u64,
    pub projected_kernel: Vec<Vec<f64>>,
}

impl DecompositionReport {
    pub fn summary(&self) -> DecompositionSummary {
        DecompositionSummary {
            blocks: self.blocks.clone(),
            masses: self.block_masses.clone(),
            phi_i: self.block_mixing_times.clone(),
            phi_max: self.phi_max,
            projected_kernel: self.projected.to_rows(),
        }
    }
}

pub fn decompose(
    kernel: &StochasticKernel,
    pi: &StationaryDistribution,
    partition: &Partition,
    horizon: u64,
) -> Result<DecompositionReport> {
    let projected = projected_kernel(kernel, pi, partition)?;
    let mut trace_kernels = Vec::with_capacity(partition.n_blocks());
    let mut phis = Vec::with_capacity(partition.n_blocks());
    for i in 0..partition.n_blocks() {
        let ki = trace_kernel(kernel, partition, i)?;
        let pii = stationary_distribution(&ki)?;
        let prof = mixing_profile(&ki, &pii, horizon)?;
        let phi = prof.mixing_time.ok_or(Error::NoFeasibleT(horizon))?;
        phis.push(phi);
        trace_kernels.push(ki);
    }
    Ok(DecompositionReport {
        blocks: partition.blocks().to_vec(),
        block_masses: partition.block_masses(pi),
        phi_max: phis.iter().copied().max().unwrap_or(0),
        block_mixing_times: phis,
        trace_kernels,
        projected,
    })
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
    fn partition_validation() {
        assert!(Partition::new(vec![0, 2]).is_err());
        assert!(Partition::from_blocks(3, vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(Partition::from_blocks(3, vec![vec![0, 1]]).is_err());
        let p = Partition::from_blocks(3, vec![vec![2], vec![0, 1]]).unwrap();
        assert_eq!(p.block_of(2), 0);
        assert_eq!(parse_partition(&format_partition(&p)).unwrap(), p);
    }

    #[test]
    fn trace_whole_space_is_identity_map() {
        let k = three_state();
        let p = Partition::single_block(3);
        assert_eq!(trace_kernel(&k, &p, 0).unwrap(), k);
    }

    #[test]
    fn trace_three_state_hand_value() {
        let k = three_state();
        let p = Partition::new(vec![0, 0, 1]).unwrap();
        let t = trace_kernel(&k, &p, 0).unwrap();
        let want = [[0.5, 0.5], [0.25, 0.75]];
        for x in 0..2 {
            for y in 0..2 {
                assert_abs_diff_eq!(t.get(x, y), want[x][y], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn projected_single_block_and_reversibility() {
        let k = three_state();
        let pi = stationary_distribution(&k).unwrap();
        let one = projected_kernel(&k, &pi, &Partition::single_block(3)).unwrap();
        assert_eq!(one.to_rows(), vec![vec![1.0]]);
        let p = Partition::new(vec![0, 0, 1]).unwrap();
        let kb = projected_kernel(&k, &pi, &p).unwrap();
        // pi(1) K(1,2) / pi(Omega_0) = (1/2)(1/4)/(3/4)
        assert_abs_diff_eq!(kb.get(0, 1), 1.0 / 6.0, epsilon = 1e-12);
        let m = p.block_masses(&pi);
        assert_abs_diff_eq!(m[0] * kb.get(0, 1), m[1] * kb.get(1, 0), epsilon = 1e-12);
    }

    #[test]
    fn less_lazy_cases() {
        let half = StochasticKernel::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_eq!(less_lazy_projection(&half).unwrap(), half);
        let slow = StochasticKernel::from_rows(vec![vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
        let ll = less_lazy_projection(&slow).unwrap();
        for v in ll.dense() {
            assert_abs_diff_eq!(*v, 0.5, epsilon = 1e-12);
        }
        let stuck = StochasticKernel::from_rows(vec![vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        assert_eq!(less_lazy_projection(&stuck), Err(Error::AbsorbingBlock(0)));
    }

    #[test]
    fn singular_return_detected() {
        // state 2 is absorbing, so excursions from {0,1} into {2} never come back
        let k = StochasticKernel::from_rows(vec![
            vec![0.5, 0.5, 0.0],
            vec![0.25, 0.5, 0.25],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let p = Partition::new(vec![0, 0, 1]).unwrap();
        assert_eq!(trace_kernel(&k, &p, 0), Err(Error::SingularReturn(0)));
    }
}
