use rand::seq::SliceRandom;
use rand::Rng;

use super::graph::{random_regular, Graph};
use crate::decomposition::Partition;
use crate::error::{Error, Result};
use crate::kernel::StochasticKernel;
use crate::sim::replica_rng;

/// Two `m`-cycles joined by one edge; every edge carries rate 1/6.
/// States `0..m` form the first loop, `m..2m` the second, and the bridge
/// joins `0` and `m`.
pub fn pince_nez(m: usize) -> Result<(StochasticKernel, Partition)> {
    if m < 3 {
        return Err(Error::InvalidParameter("pince-nez needs m >= 3".into()));
    }
    let r = 1.0 / 6.0;
    let mut entries = Vec::new();
    for base in [0, m] {
        for i in 0..m {
            let j = (i + 1) % m;
            entries.push((base + i, base + j, r));
            entries.push((base + j, base + i, r));
        }
    }
    entries.push((0, m, r));
    entries.push((m, 0, r));
    let labels = (0..2 * m)
        .map(|x| format!("{}:{}", x / m + 1, x % m + 1))
        .collect();
    let k = StochasticKernel::from_off_diagonal(2 * m, &entries)?.with_labels(labels)?;
    let p = Partition::new((0..2 * m).map(|x| x / m).collect())?;
    Ok((k, p))
}

/// Index of `(i, j)` (1-based level `j` in 1..=3) in the toy chain.
pub fn toy_kcip_index(i: usize, j: usize) -> usize {
    3 * i + (j - 1)
}

/// Backbone `(i,1)` walking with rates 1/6 up and 1/3 down, each rung
/// `(i,1)-(i,2)-(i,3)` climbed slowly at rate `1/(6 m^d)`.
pub fn toy_kcip(m: usize, d: u32) -> Result<(StochasticKernel, Partition)> {
    if m < 2 || d < 1 {
        return Err(Error::InvalidParameter("toy chain needs m >= 2, d >= 1".into()));
    }
    let slow = 1.0 / (6.0 * (m as f64).powi(d as i32));
    let mut e = Vec::new();
    for i in 0..m {
        let b = toy_kcip_index(i, 1);
        if i + 1 < m {
            e.push((b, toy_kcip_index(i + 1, 1), 1.0 / 6.0));
        }
        if i > 0 {
            e.push((b, toy_kcip_index(i - 1, 1), 1.0 / 3.0));
        }
        e.push((b, toy_kcip_index(i, 2), 1.0 / 6.0));
        e.push((toy_kcip_index(i, 2), b, slow));
        e.push((toy_kcip_index(i, 2), toy_kcip_index(i, 3), slow));
        e.push((toy_kcip_index(i, 3), toy_kcip_index(i, 2), slow));
    }
    let labels = (0..3 * m).map(|x| format!("({},{})", x / 3 + 1, x % 3 + 1)).collect();
    let k = StochasticKernel::from_off_diagonal(3 * m, &e)?.with_labels(labels)?;
    let p = Partition::new((0..3 * m).map(|x| x / 3).collect())?;
    Ok((k, p))
}

#[derive(Debug, Clone)]
pub struct ExpanderPair {
    pub kernel: StochasticKernel,
    /// `Omega_u = {(1,u), (2,u)}`.
    pub partition: Partition,
    /// The states `(1,u)`, which are `0..m`; `(2,u)` is `m + u`.
    pub lower: Vec<usize>,
    pub graph: Graph,
}

/// Two copies of a random `d`-regular graph: the lower copy runs the
/// 3/4-lazy walk, each lower vertex jumps up with probability 1/2 and
/// each upper vertex drops back with probability `epsilon`.
pub fn expander_pair(m: usize, d: usize, epsilon: f64, seed: u64) -> Result<ExpanderPair> {
    let cap = if m > 1 { 0.25f64.min(1.0 / (m as f64).ln()) } else { 0.25 };
    if !(epsilon > 0.0 && epsilon <= cap + 1e-15) {
        return Err(Error::InvalidParameter(format!(
            "epsilon = {epsilon} must lie in (0, min(1/4, 1/log m)]"
        )));
    }
    let graph = random_regular(m, d, seed)?;
    let q = 1.0 / (4.0 * d as f64);
    let mut e = Vec::new();
    for u in 0..m {
        for &v in graph.neighbors(u) {
            e.push((u, v, q));
        }
        e.push((u, m + u, 0.5));
        e.push((m + u, u, epsilon));
    }
    let labels = (0..2 * m).map(|x| format!("({},{})", x / m + 1, x % m)).collect();
    let kernel = StochasticKernel::from_off_diagonal(2 * m, &e)?.with_labels(labels)?;
    let partition = Partition::new((0..2 * m).map(|x| x % m).collect())?;
    Ok(ExpanderPair { kernel, partition, lower: (0..m).collect(), graph })
}

/// Random reversible, 1/2-lazy chain on `n` states: a random spanning
/// path plus extra random edges with random conductances, and a random
/// stationary vector.
pub fn random_reversible(n: usize, seed: u64) -> Result<StochasticKernel> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    let mut rng = replica_rng(seed, 0);
    let pi: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cond = vec![0.0; n * n];
    for w in order.windows(2) {
        let c = rng.random_range(0.1..1.0);
        cond[w[0] * n + w[1]] = c;
        cond[w[1] * n + w[0]] = c;
    }
    for x in 0..n {
        for y in (x + 1)..n {
            if rng.random::<f64>() < 0.3 {
                let c = rng.random_range(0.1..1.0);
                cond[x * n + y] += c;
                cond[y * n + x] += c;
            }
        }
    }
    // K(x,y) = C(x,y) / (pi(x) M) with M making every row at most half off-diagonal
    let m = (0..n)
        .map(|x| (0..n).map(|y| cond[x * n + y]).sum::<f64>() / pi[x])
        .fold(0.0, f64::max)
        * 2.0;
    let mut entries = Vec::new();
    for x in 0..n {
        for y in 0..n {
            if x != y && cond[x * n + y] > 0.0 {
                entries.push((x, y, cond[x * n + y] / (pi[x] * m)));
            }
        }
    }
    StochasticKernel::from_off_diagonal(n, &entries)
}

/// Random partition of `n` states into `blocks` nonempty blocks.
pub fn random_partition(n: usize, blocks: usize, seed: u64) -> Result<Partition> {
    if blocks == 0 || blocks > n {
        return Err(Error::InvalidParameter(format!("cannot split {n} states into {blocks}")));
    }
    let mut rng = replica_rng(seed, 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut block_of = vec![0; n];
    for (k, &x) in order.iter().enumerate() {
        block_of[x] = if k < blocks { k } else { rng.random_range(0..blocks) };
    }
    Partition::new(block_of)
}
