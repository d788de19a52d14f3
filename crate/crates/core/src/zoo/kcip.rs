use rand::Rng;

use super::graph::Graph;
use crate::decomposition::Partition;
use crate::error::{Error, Result};
use crate::kernel::{StationaryDistribution, StochasticKernel};
use crate::sim::{Sampler, SimRng};
use crate::tolerance::DENSE_LIMIT;

/// Which vertices must be occupied for `v` to update.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Neighborhood {
    Adjacency,
    Custom(Vec<Vec<usize>>),
}

/// Kinetically constrained Ising process on a graph. States are occupation
/// bit masks; the empty configuration is excluded, and mask `s` has state
/// index `s - 1`.
#[derive(Debug, Clone)]
pub struct Kcip {
    graph: Graph,
    p: f64,
    hood: Vec<u64>,
}

pub const MAX_VERTICES: usize = 30;

pub fn kcip(graph: Graph, c: f64, neighborhood: Neighborhood) -> Result<Kcip> {
    let nv = graph.n_vertices();
    if nv == 0 || nv > MAX_VERTICES {
        return Err(Error::TooLarge { got: nv, limit: MAX_VERTICES });
    }
    if !graph.is_connected() {
        return Err(Error::InvalidParameter("graph must be connected".into()));
    }
    let p = c / nv as f64;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!("p = c/|V| = {p} must lie in (0,1)")));
    }
    let lists: Vec<Vec<usize>> = match neighborhood {
        Neighborhood::Adjacency => (0..nv).map(|v| graph.neighbors(v).to_vec()).collect(),
        Neighborhood::Custom(n) => {
            if n.len() != nv || n.iter().flatten().any(|&u| u >= nv) {
                return Err(Error::InvalidParameter("custom neighbourhood out of range".into()));
            }
            n
        }
    };
    let hood = lists.iter().map(|l| l.iter().fold(0u64, |m, &u| m | (1 << u))).collect();
    Ok(Kcip { graph, p, hood })
}

impl Kcip {
    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn n_vertices(&self) -> usize {
        self.graph.n_vertices()
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn mask_of(&self, state: usize) -> u64 {
        state as u64 + 1
    }

    pub fn state_of(&self, mask: u64) -> usize {
        (mask - 1) as usize
    }

    /// One update: pick `v` uniformly; if a constraining vertex is occupied,
    /// resample `X[v]` as Bernoulli(p).
    pub fn step_mask(&self, mask: u64, rng: &mut SimRng) -> u64 {
        let v = rng.random_range(0..self.n_vertices());
        if mask & self.hood[v] == 0 {
            return mask;
        }
        if rng.random::<f64>() < self.p {
            mask | (1 << v)
        } else {
            mask & !(1 << v)
        }
    }

    pub fn explicit_kernel(&self) -> Result<StochasticKernel> {
        let nv = self.n_vertices();
        let n = (1usize << nv) - 1;
        if n > DENSE_LIMIT {
            return Err(Error::TooLarge { got: n, limit: DENSE_LIMIT });
        }
        let w = 1.0 / nv as f64;
        let mut entries = Vec::new();
        for s in 0..n {
            let mask = self.mask_of(s);
            for v in 0..nv {
                if mask & self.hood[v] == 0 {
                    continue;
                }
                let up = mask | (1 << v);
                let down = mask & !(1 << v);
                if up != mask {
                    entries.push((s, self.state_of(up), w * self.p));
                }
                if down != mask && down != 0 {
                    entries.push((s, self.state_of(down), w * (1.0 - self.p)));
                }
            }
        }
        StochasticKernel::from_off_diagonal(n, &entries)
    }

    /// `pi(x) ∝ p^{|x|} (1-p)^{|V|-|x|}` on nonempty configurations.
    pub fn stationary(&self) -> StationaryDistribution {
        let nv = self.n_vertices();
        let n = (1usize << nv) - 1;
        let q = self.p / (1.0 - self.p);
        let mut w: Vec<f64> =
            (0..n).map(|s| q.powi(self.mask_of(s).count_ones() as i32)).collect();
        let z: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= z);
        StationaryDistribution { weights: w }
    }

    fn has_adjacent_pair(&self, mask: u64) -> bool {
        (0..self.n_vertices()).any(|u| mask & (1 << u) != 0 && mask & self.hood[u] != 0)
    }

    /// Blocks `Omega_k` (exactly `k` particles, none constraining another)
    /// for `k = 1..=n_cap`, then the remainder. Empty blocks are dropped;
    /// the returned labels name the surviving blocks.
    pub fn partition(&self, n_cap: usize) -> Result<(Partition, Vec<String>)> {
        let nv = self.n_vertices();
        let n = (1usize << nv) - 1;
        let raw: Vec<usize> = (0..n)
            .map(|s| {
                let mask = self.mask_of(s);
                let k = mask.count_ones() as usize;
                if k <= n_cap && !self.has_adjacent_pair(mask) {
                    k - 1
                } else {
                    n_cap
                }
            })
            .collect();
        let mut used = vec![false; n_cap + 1];
        raw.iter().for_each(|&b| used[b] = true);
        let mut remap = vec![usize::MAX; n_cap + 1];
        let mut labels = Vec::new();
        for b in 0..=n_cap {
            if used[b] {
                remap[b] = labels.len();
                labels.push(if b < n_cap { format!("k={}", b + 1) } else { "rest".into() });
            }
        }
        let p = Partition::new(raw.iter().map(|&b| remap[b]).collect())?;
        Ok((p, labels))
    }
}

impl Sampler for Kcip {
    fn n_states(&self) -> usize {
        (1usize << self.n_vertices()) - 1
    }

    fn step(&self, x: usize, rng: &mut SimRng) -> usize {
        self.state_of(self.step_mask(self.mask_of(x), rng))
    }
}
