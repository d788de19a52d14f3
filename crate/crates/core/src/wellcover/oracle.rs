use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::WellCoveringQuery;
use crate::error::{Error, Result};

pub const ORACLE_BLOCK_LIMIT: usize = 3;

/// A pair `(kappa, N)` in the plausible set with some `kappa(i) <= t_i / T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub kappa: Vec<f64>,
    pub n: Vec<Vec<f64>>,
    pub block: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOutcome {
    pub horizon: u64,
    pub covered: bool,
    pub witnesses: Vec<Witness>,
    /// Spacing of the search grid on the simplex.
    pub grid_tolerance: f64,
}

/// Max flow on a dense residual matrix (Edmonds-Karp).
fn max_flow(cap: &mut [Vec<f64>], s: usize, t: usize) -> f64 {
    let n = cap.len();
    let mut total = 0.0;
    loop {
        let mut pred = vec![usize::MAX; n];
        pred[s] = s;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if pred[v] == usize::MAX && cap[u][v] > 1e-15 {
                    pred[v] = u;
                    queue.push_back(v);
                }
            }
        }
        if pred[t] == usize::MAX {
            return total;
        }
        let mut b = f64::INFINITY;
        let mut v = t;
        while v != s {
            b = b.min(cap[pred[v]][v]);
            v = pred[v];
        }
        let mut v = t;
        while v != s {
            let u = pred[v];
            cap[u][v] -= b;
            cap[v][u] += b;
            v = u;
        }
        total += b;
    }
}

/// Finds `N` with `(kappa, N)` in the plausible set, if one exists.
///
/// With `kappa` fixed every constraint is an interval: entry bounds from
/// the two concentration lines (all ordered pairs, diagonal included),
/// row and column sums within `1/T` of `kappa`, total mass 1. That is a
/// circulation with lower bounds, checked by one max flow.
pub fn matching_transitions(query: &WellCoveringQuery, kappa: &[f64], horizon: f64) -> Option<Vec<Vec<f64>>> {
    let n = kappa.len();
    let q = &query.projected;
    let slack = 1.0 / horizon;
    let mut lo = vec![vec![0.0; n]; n];
    let mut hi = vec![vec![0.0; n]; n];
    for i in 0..n {
        let r = query.b * kappa[i].max(0.0).sqrt() / horizon.sqrt();
        for j in 0..n {
            let a = kappa[i] * q.get(i, j);
            let c = kappa[j] * q.get(j, i);
            lo[i][j] = 0.0f64.max(a - r).max(c - r);
            hi[i][j] = 1.0f64.min(a + r).min(c + r);
            if lo[i][j] > hi[i][j] {
                return None;
            }
        }
    }
    // nodes: s, rows, cols, t, then super source / sink
    let s = 0;
    let t = 2 * n + 1;
    let ss = 2 * n + 2;
    let tt = 2 * n + 3;
    let mut cap = vec![vec![0.0; 2 * n + 4]; 2 * n + 4];
    let mut excess = vec![0.0; 2 * n + 2];
    let mut edge = |cap: &mut Vec<Vec<f64>>, u: usize, v: usize, l: f64, h: f64| {
        cap[u][v] += h - l;
        excess[v] += l;
        excess[u] -= l;
    };
    for i in 0..n {
        let l = (kappa[i] - slack).max(0.0);
        let h = kappa[i] + slack;
        edge(&mut cap, s, 1 + i, l, h);
        edge(&mut cap, 1 + n + i, t, l, h);
        for j in 0..n {
            edge(&mut cap, 1 + i, 1 + n + j, lo[i][j], hi[i][j]);
        }
    }
    edge(&mut cap, t, s, 1.0, 1.0);
    let mut demand = 0.0;
    for (v, &e) in excess.iter().enumerate() {
        if e > 0.0 {
            cap[ss][v] += e;
            demand += e;
        } else if e < 0.0 {
            cap[v][tt] -= e;
        }
    }
    let original: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| cap[1 + i][1 + n + j]).collect()).collect();
    let f = max_flow(&mut cap, ss, tt);
    if f < demand - 1e-12 {
        return None;
    }
    Some(
        (0..n)
            .map(|i| (0..n).map(|j| lo[i][j] + (original[i][j] - cap[1 + i][1 + n + j]).max(0.0)).collect())
            .collect(),
    )
}

/// Searches the plausible set at horizon `T` for a pair violating some
/// `kappa(i) > t_i / T`.
///
/// The plausible set is convex (each constraint bounds `N - kappa Q` by a
/// concave function of `kappa`) and always contains `kappa = mu`, so its
/// projection onto coordinate `i` is an interval through `mu(i)`. A
/// violation at block `i` therefore exists iff `mu(i) <= t_i / T` or the
/// slice `kappa(i) = t_i / T` is feasible. For `n = 2` the slice is one
/// point; for `n = 3` it is a segment scanned at `resolution` points.
pub fn feasibility_oracle(query: &WellCoveringQuery, horizon: u64, resolution: usize) -> Result<OracleOutcome> {
    let n = query.n();
    if n > ORACLE_BLOCK_LIMIT {
        return Err(Error::TooManyBlocks { got: n, limit: ORACLE_BLOCK_LIMIT });
    }
    if resolution < 64 {
        return Err(Error::InvalidParameter("grid resolution must be at least 64".into()));
    }
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    let h = horizon as f64;
    let mu = query.stationary()?;
    let mut witnesses = Vec::new();
    for i in 0..n {
        let v = query.thresholds[i] / h;
        if mu[i] <= v {
            // the stationary pair itself violates
            let nmat = (0..n).map(|a| (0..n).map(|b| mu[a] * query.projected.get(a, b)).collect()).collect();
            witnesses.push(Witness { kappa: mu.clone(), n: nmat, block: i });
            continue;
        }
        let rest: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let slice: Vec<Vec<f64>> = match rest.len() {
            // kappa = (1) is forced
            0 => Vec::new(),
            1 => {
                let mut k = vec![0.0; n];
                k[i] = v;
                k[rest[0]] = 1.0 - v;
                vec![k]
            }
            _ => (0..=resolution)
                .map(|g| {
                    let w = (1.0 - v) * g as f64 / resolution as f64;
                    let mut k = vec![0.0; n];
                    k[i] = v;
                    k[rest[0]] = w;
                    k[rest[1]] = 1.0 - v - w;
                    k
                })
                .collect(),
        };
        let found = slice
            .par_iter()
            .find_map_first(|k| matching_transitions(query, k, h).map(|nm| (k.clone(), nm)));
        if let Some((kappa, nm)) = found {
            witnesses.push(Witness { kappa, n: nm, block: i });
        }
    }
    let grid_tolerance = if n == 3 { 2.0 / resolution as f64 } else { 0.0 };
    Ok(OracleOutcome { horizon, covered: witnesses.is_empty(), witnesses, grid_tolerance })
}

/// Least integer `T` at which the oracle reports the query covered
/// (doubling, then bisection; coverage is monotone in `T`).
pub fn oracle_wc_time(query: &WellCoveringQuery, resolution: usize, max_horizon: u64) -> Result<u64> {
    let covered = |h: u64| feasibility_oracle(query, h, resolution).map(|o| o.covered);
    let mut lo = 0u64;
    let mut hi = 1u64;
    while !covered(hi)? {
        lo = hi;
        hi = hi.checked_mul(2).filter(|&x| x <= max_horizon).ok_or(Error::NoFeasibleT(max_horizon))?;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if covered(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
