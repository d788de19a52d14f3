use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::replica_rng;

/// Simple undirected graph as adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    adj: Vec<Vec<usize>>,
}

impl Graph {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n || u == v {
                return Err(Error::InvalidParameter(format!("bad edge ({u},{v})")));
            }
            if !adj[u].contains(&v) {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
        }
        Ok(Self { adj })
    }

    pub fn cycle(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidParameter("cycle needs at least 3 vertices".into()));
        }
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Self::from_edges(n, &edges)
    }

    /// The periodic lattice `Z_L^dim`; for `L = 2` neighbours along an axis coincide.
    pub fn lattice_torus(l: usize, dim: usize) -> Result<Self> {
        if l < 2 || dim == 0 {
            return Err(Error::InvalidParameter("lattice needs L >= 2, dim >= 1".into()));
        }
        let n = l.pow(dim as u32);
        let mut edges = Vec::new();
        for v in 0..n {
            let mut stride = 1;
            for _ in 0..dim {
                let coord = (v / stride) % l;
                let up = v - coord * stride + ((coord + 1) % l) * stride;
                edges.push((v, up));
                stride *= l;
            }
        }
        Self::from_edges(n, &edges)
    }

    pub fn n_vertices(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn is_connected(&self) -> bool {
        let n = self.adj.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &u in &self.adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    /// Second largest eigenvalue of the simple random walk `A / deg` on a regular graph.
    pub fn walk_lambda2(&self) -> f64 {
        let n = self.adj.len();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for v in 0..n {
            let d = self.adj[v].len() as f64;
            for &u in &self.adj[v] {
                a[(v, u)] = 1.0 / d;
            }
        }
        let mut ev: Vec<f64> = a.symmetric_eigenvalues().iter().cloned().collect();
        ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
        ev.get(1).copied().unwrap_or(0.0)
    }
}

pub const REGULAR_ATTEMPTS: usize = 100;
pub const LAMBDA2_CEILING: f64 = 0.9;

/// Seeded random `d`-regular simple graph. Each attempt pairs the `n d`
/// half-edges uniformly, rejecting loops and repeated edges as they are
/// drawn; attempts that get stuck, are disconnected, or have walk
/// `lambda_2 > 0.9` are discarded.
pub fn random_regular(n: usize, d: usize, seed: u64) -> Result<Graph> {
    if d < 3 || d >= n || (n * d) % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "need 3 <= d < n with n d even (n = {n}, d = {d})"
        )));
    }
    for attempt in 0..REGULAR_ATTEMPTS {
        let mut rng = replica_rng(seed, attempt as u64);
        if let Some(edges) = try_pairing(n, d, &mut rng) {
            let g = Graph::from_edges(n, &edges)?;
            if g.is_connected() && g.walk_lambda2() <= LAMBDA2_CEILING {
                return Ok(g);
            }
        }
    }
    Err(Error::GraphGenerationFailed(REGULAR_ATTEMPTS))
}

fn try_pairing<R: Rng>(n: usize, d: usize, rng: &mut R) -> Option<Vec<(usize, usize)>> {
    let mut points: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, d)).collect();
    points.shuffle(rng);
    let mut adj = vec![Vec::with_capacity(d); n];
    let mut edges = Vec::with_capacity(n * d / 2);
    while !points.is_empty() {
        let mut placed = false;
        for _ in 0..50 * points.len() {
            let i = rng.random_range(0..points.len());
            let j = rng.random_range(0..points.len());
            let (u, v) = (points[i], points[j]);
            if i == j || u == v || adj[u].contains(&v) {
                continue;
            }
            adj[u].push(v);
            adj[v].push(u);
            edges.push((u, v));
            let (hi, lo) = if i > j { (i, j) } else { (j, i) };
            points.swap_remove(hi);
            points.swap_remove(lo);
            placed = true;
            break;
        }
        if !placed {
            return None;
        }
    }
    Some(edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regular_graph_is_regular_and_reproducible() {
        let g = random_regular(64, 6, 11).unwrap();
        assert!((0..64).all(|v| g.degree(v) == 6));
        assert!(g.walk_lambda2() <= 0.9);
        assert_eq!(g, random_regular(64, 6, 11).unwrap());
        assert!(random_regular(5, 3, 1).is_err());
    }

    #[test]
    fn lattice_degrees() {
        let g = Graph::lattice_torus(2, 3).unwrap();
        assert_eq!(g.n_vertices(), 8);
        assert!((0..8).all(|v| g.degree(v) == 3));
        let g = Graph::lattice_torus(4, 2).unwrap();
        assert!((0..16).all(|v| g.degree(v) == 4));
        assert!(Graph::cycle(5).unwrap().is_connected());
    }
}
