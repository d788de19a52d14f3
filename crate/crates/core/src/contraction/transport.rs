use serde::{Deserialize, Serialize};

use super::BlockMetric;
use crate::error::{Error, Result};

/// Support-size ceiling for the exact transport solver.
pub const TRANSPORT_LIMIT: usize = 2000;

const MASS_EPS: f64 = 1e-15;

/// An optimal coupling between two distributions together with dual
/// potentials certifying its optimality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transport {
    pub value: f64,
    /// `(from, to, mass)` for the moved part; shared mass stays put at cost 0.
    pub plan: Vec<(usize, usize, f64)>,
    /// `u` on sources, `v` on sinks, with `u(i) + v(j) <= d(i,j)`.
    pub dual_value: f64,
    pub max_dual_violation: f64,
}

/// Exact `W_d(mu, nu)`. See [`transport`].
pub fn wasserstein(mu: &[f64], nu: &[f64], metric: &BlockMetric) -> Result<f64> {
    Ok(transport(mu, nu, metric)?.value)
}

/// Exact optimal transport on a finite metric space.
///
/// Shared mass `min(mu, nu)` is left in place (optimal under the triangle
/// inequality); the excess of `mu` is routed to the excess of `nu` by
/// successive shortest paths with Bellman-Ford on the residual graph.
pub fn transport(mu: &[f64], nu: &[f64], metric: &BlockMetric) -> Result<Transport> {
    let n = metric.n();
    for v in [mu, nu] {
        if v.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: v.len() });
        }
    }
    let mut sources = Vec::new();
    let mut sinks = Vec::new();
    for i in 0..n {
        let diff = mu[i] - nu[i];
        if diff > MASS_EPS {
            sources.push((i, diff));
        } else if diff < -MASS_EPS {
            sinks.push((i, -diff));
        }
    }
    if sources.len() + sinks.len() > TRANSPORT_LIMIT {
        return Err(Error::TooLarge { got: sources.len() + sinks.len(), limit: TRANSPORT_LIMIT });
    }
    // balance rounding so total supply equals total demand
    let s: f64 = sources.iter().map(|p| p.1).sum();
    let t: f64 = sinks.iter().map(|p| p.1).sum();
    if sources.is_empty() || sinks.is_empty() {
        return Ok(Transport { value: 0.0, plan: vec![], dual_value: 0.0, max_dual_violation: 0.0 });
    }
    let target = s.min(t);
    let ns = sources.len();
    let nt = sinks.len();
    let mut supply: Vec<f64> = sources.iter().map(|p| p.1 * target / s).collect();
    let mut demand: Vec<f64> = sinks.iter().map(|p| p.1 * target / t).collect();
    let cost = |a: usize, b: usize| metric.d(sources[a].0, sinks[b].0);
    let mut flow = vec![0.0; ns * nt];
    // nodes 0..ns are sources, ns..ns+nt sinks
    let nn = ns + nt;
    let mut remaining = target;
    let tol = 1e-14 * target.max(1.0);
    while remaining > tol {
        let mut dist = vec![f64::INFINITY; nn];
        let mut pred = vec![usize::MAX; nn];
        for a in 0..ns {
            if supply[a] > tol {
                dist[a] = 0.0;
            }
        }
        bellman_ford(&mut dist, &mut pred, ns, nt, &flow, tol, &cost);
        let end = (0..nt)
            .filter(|&b| demand[b] > tol && dist[ns + b].is_finite())
            .min_by(|&x, &y| dist[ns + x].total_cmp(&dist[ns + y]));
        let Some(end) = end else { break };
        // walk back, collecting the bottleneck
        let mut bottleneck = demand[end];
        let mut node = ns + end;
        let mut path = Vec::new();
        while pred[node] != usize::MAX {
            if path.len() > nn {
                return Err(Error::AssertionFailed("negative cycle in transport residual".into()));
            }
            let p = pred[node];
            path.push((p, node));
            if p >= ns {
                // reverse edge sink -> source carries existing flow
                bottleneck = bottleneck.min(flow[node * nt + (p - ns)]);
            }
            node = p;
        }
        bottleneck = bottleneck.min(supply[node]);
        if bottleneck <= 0.0 {
            break;
        }
        supply[node] -= bottleneck;
        demand[end] -= bottleneck;
        for &(p, q) in &path {
            if p < ns {
                flow[p * nt + (q - ns)] += bottleneck;
            } else {
                let f = &mut flow[q * nt + (p - ns)];
                *f = (*f - bottleneck).max(0.0);
            }
        }
        remaining -= bottleneck;
    }

    let mut value = 0.0;
    let mut plan = Vec::new();
    for a in 0..ns {
        for b in 0..nt {
            let f = flow[a * nt + b];
            if f > 0.0 {
                value += f * cost(a, b);
                plan.push((sources[a].0, sinks[b].0, f));
            }
        }
    }
    // potentials from all-zero initialization on the final residual graph
    let mut dist = vec![0.0; nn];
    let mut pred = vec![usize::MAX; nn];
    bellman_ford(&mut dist, &mut pred, ns, nt, &flow, tol, &cost);
    let mut dual_value = 0.0;
    let mut max_dual_violation: f64 = 0.0;
    for a in 0..ns {
        dual_value -= sources[a].1 * target / s * dist[a];
        for b in 0..nt {
            max_dual_violation = max_dual_violation.max(dist[ns + b] - dist[a] - cost(a, b));
        }
    }
    for b in 0..nt {
        dual_value += sinks[b].1 * target / t * dist[ns + b];
    }
    Ok(Transport { value, plan, dual_value, max_dual_violation })
}

/// Relaxes the bipartite residual graph: forward edges source -> sink
/// always, backward edges sink -> source where flow is positive.
fn bellman_ford(
    dist: &mut [f64],
    pred: &mut [usize],
    ns: usize,
    nt: usize,
    flow: &[f64],
    tol: f64,
    cost: &impl Fn(usize, usize) -> f64,
) {
    for _ in 0..(ns + nt) {
        let mut changed = false;
        for a in 0..ns {
            for b in 0..nt {
                let c = cost(a, b);
                if dist[a] + c < dist[ns + b] - 1e-15 {
                    dist[ns + b] = dist[a] + c;
                    pred[ns + b] = a;
                    changed = true;
                }
                if flow[a * nt + b] > tol && dist[ns + b] - c < dist[a] - 1e-15 {
                    dist[a] = dist[ns + b] - c;
                    pred[a] = ns + b;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}
