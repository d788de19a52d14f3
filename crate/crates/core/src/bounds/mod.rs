//! Closed-form and search-based mixing-time bounds.
//!
//! Every evaluator returns a [`BoundResult`] recording its inputs. The
//! universal constants of the hitting/mixing equivalence are never
//! guessed: they default to 1 and the result is flagged.

mod audit;
mod tails;

pub use audit::{calibrate, peres_sousi_audit, Calibration, PeresSousiAudit, SubsetMode, EXACT_AUDIT_LIMIT};
pub use tails::{ExactTails, FnTails, McTails, OccupationTails, QualifyingSets, TailProvenance, TABLE_LIMIT};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::{escape_analysis, Partition};
use crate::error::{Error, Result};
use crate::kernel::StochasticKernel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeresSousiConstants {
    pub c_alpha: f64,
    pub c_alpha_prime: f64,
    pub calibrated: bool,
}

impl Default for PeresSousiConstants {
    fn default() -> Self {
        Self { c_alpha: 1.0, c_alpha_prime: 1.0, calibrated: false }
    }
}

impl PeresSousiConstants {
    pub fn new(c_alpha: f64, c_alpha_prime: f64, calibrated: bool) -> Result<Self> {
        if !(c_alpha > 0.0 && c_alpha_prime > 0.0 && c_alpha.is_finite() && c_alpha_prime.is_finite()) {
            return Err(Error::InvalidParameter("constants must be positive and finite".into()));
        }
        Ok(Self { c_alpha, c_alpha_prime, calibrated })
    }

    /// Parses `c_alpha=..,c_alpha_prime=..`; explicit values count as calibrated.
    pub fn parse(s: &str) -> Result<Self> {
        let mut c = Self::default();
        for kv in s.split(',').map(str::trim).filter(|kv| !kv.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::ConfigInvalid(format!("expected key=value, got {kv:?}")))?;
            let val: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::ConfigInvalid(format!("bad constant {v:?}")))?;
            match k.trim() {
                "c_alpha" => c.c_alpha = val,
                "c_alpha_prime" => c.c_alpha_prime = val,
                other => return Err(Error::ConfigInvalid(format!("unknown constant {other:?}"))),
            }
            c.calibrated = true;
        }
        Self::new(c.c_alpha, c.c_alpha_prime, c.calibrated)
    }
}

/// Where a number came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Exact,
    Mc { reps: u64, seed: u64 },
    Formula { universal_constant: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub name: String,
    pub value: f64,
    pub ingredients: BTreeMap<String, f64>,
    pub universal_constant_flag: bool,
    pub provenance: Provenance,
    /// Provenance of occupation-tail inputs, when any were used.
    pub tails: Option<TailProvenance>,
    pub notes: Vec<String>,
}

impl BoundResult {
    pub(crate) fn formula(name: &str, value: f64, universal: bool, ingredients: &[(&str, f64)]) -> Self {
        Self {
            name: name.into(),
            value,
            ingredients: ingredients.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            universal_constant_flag: universal,
            provenance: Provenance::Formula { universal_constant: universal },
            tails: None,
            notes: Vec::new(),
        }
    }

    fn with_tails(mut self, tails: TailProvenance) -> Self {
        self.provenance = match &tails {
            TailProvenance::Mc { reps, seed, .. } => Provenance::Mc { reps: *reps, seed: *seed },
            _ => self.provenance,
        };
        self.tails = Some(tails);
        self
    }
}

/// Horizon search settings for the occupation-time bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub max_horizon: u64,
    pub grid_points: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { max_horizon: 1 << 24, grid_points: 64 }
    }
}

/// Up to `points` integers spread logarithmically over `[1, horizon - 1]`.
pub fn log_grid(horizon: u64, points: usize) -> Vec<u64> {
    if horizon < 2 || points == 0 {
        return Vec::new();
    }
    let top = (horizon - 1) as f64;
    let mut g: Vec<u64> = (0..points)
        .map(|k| {
            let f = if points == 1 { 1.0 } else { k as f64 / (points - 1) as f64 };
            (top.powf(f).round() as u64).clamp(1, horizon - 1)
        })
        .collect();
    g.dedup();
    g
}

/// A horizon found by [`least_horizon`] with the witnessing `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonWitness {
    pub horizon: u64,
    pub t: u64,
    pub objective: f64,
}

/// Least `T` (doubling, then bisection) for which some grid `t` has
/// `objective(T, t) < 1/4`. Assumes feasibility is monotone in `T`.
pub fn least_horizon<F>(opts: &SearchOptions, objective: F) -> Result<HorizonWitness>
where
    F: Fn(u64, u64) -> Result<Option<f64>> + Sync,
{
    let feasible = |h: u64| -> Result<Option<HorizonWitness>> {
        let grid = log_grid(h, opts.grid_points);
        let found = grid
            .par_iter()
            .map(|&t| objective(h, t).map(|o| o.filter(|&v| v < 0.25).map(|v| (t, v))))
            .find_map_first(|r| match r {
                Ok(None) => None,
                other => Some(other),
            });
        match found {
            None => Ok(None),
            Some(Err(e)) => Err(e),
            Some(Ok(w)) => Ok(w.map(|(t, v)| HorizonWitness { horizon: h, t, objective: v })),
        }
    };
    let mut lo = 1u64;
    let mut hi = 2u64;
    let mut best = loop {
        if hi > opts.max_horizon {
            return Err(Error::NoFeasibleT(opts.max_horizon));
        }
        if let Some(w) = feasible(hi)? {
            break w;
        }
        lo = hi;
        hi = hi.saturating_mul(2);
    };
    while best.horizon - lo > 1 {
        let mid = lo + (best.horizon - lo) / 2;
        match feasible(mid)? {
            Some(w) => best = w,
            None => lo = mid,
        }
    }
    Ok(best)
}

pub(crate) fn check_alpha_beta(alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 0.5 && beta > 1.0 - alpha && beta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < alpha < 1/2 and 1 - alpha < beta < 1, got alpha = {alpha}, beta = {beta}"
        )));
    }
    Ok(0.5f64.min((alpha + beta - 1.0) / beta))
}

/// `(4/3) c_alpha T*` with `T*` the least `T` admitting `t < T` and
/// `max_{i in I} (phi_i / (c' t) + tail(i, T, t)) < 1/4`.
#[allow(clippy::too_many_arguments)]
pub fn bound_basic(
    phi: &[f64],
    tails: &dyn OccupationTails,
    masses: &[f64],
    alpha: f64,
    beta: f64,
    blocks: &[usize],
    constants: &PeresSousiConstants,
    opts: &SearchOptions,
) -> Result<BoundResult> {
    let gamma = check_alpha_beta(alpha, beta)?;
    let nb = tails.n_blocks();
    if phi.len() != nb || masses.len() != nb {
        return Err(Error::DimensionMismatch { expected: nb, got: phi.len().min(masses.len()) });
    }
    if blocks.is_empty() || blocks.iter().any(|&i| i >= nb) {
        return Err(Error::InvalidParameter("block set empty or out of range".into()));
    }
    let mass: f64 = blocks.iter().map(|&i| masses[i]).sum();
    if mass <= beta {
        return Err(Error::InvalidParameter(format!("pi(union I) = {mass} does not exceed beta = {beta}")));
    }
    let cp = constants.c_alpha_prime;
    let phi_term = |t: u64| blocks.iter().map(|&i| phi[i] / (cp * t as f64)).fold(0.0, f64::max);
    let w = least_horizon(opts, |h, t| {
        if phi_term(t) >= 0.25 {
            return Ok(None);
        }
        let mut worst: f64 = 0.0;
        for &i in blocks {
            worst = worst.max(phi[i] / (cp * t as f64) + tails.block_tail(i, h, t)?);
            if worst >= 0.25 {
                return Ok(None);
            }
        }
        Ok(Some(worst))
    })?;
    let value = 4.0 / 3.0 * constants.c_alpha * w.horizon as f64;
    let mut r = BoundResult::formula(
        "basic",
        value,
        !constants.calibrated,
        &[
            ("T", w.horizon as f64),
            ("t", w.t as f64),
            ("objective", w.objective),
            ("alpha", alpha),
            ("beta", beta),
            ("gamma", gamma),
            ("mass_I", mass),
            ("c_alpha", constants.c_alpha),
            ("c_alpha_prime", cp),
        ],
    );
    for &i in blocks {
        r.ingredients.insert(format!("phi_{i}"), phi[i]);
    }
    Ok(r.with_tails(tails.provenance()))
}

/// `(4/3) c_alpha T'` with `T'` the least `T` admitting `t < T` and
/// `max_I (P[all kappa_i(T) < t] + sum_{i in I} exp(-floor(c' t / (e phi_i)))) < 1/4`
/// over block sets with `pi(union I) >= alpha / 2`.
///
/// Only minimal qualifying sets are examined: the covering argument needs
/// one such set inside each large set. When they cannot be enumerated the
/// two terms are maximized separately, which can only raise the objective.
pub fn bound_basic2(
    phi: &[f64],
    tails: &dyn OccupationTails,
    masses: &[f64],
    alpha: f64,
    constants: &PeresSousiConstants,
    opts: &SearchOptions,
) -> Result<BoundResult> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} outside (0, 1/2)")));
    }
    let nb = tails.n_blocks();
    if phi.len() != nb || masses.len() != nb {
        return Err(Error::DimensionMismatch { expected: nb, got: phi.len().min(masses.len()) });
    }
    let sets = QualifyingSets::new(masses, alpha / 2.0)?;
    let cp = constants.c_alpha_prime;
    let weights = |t: u64| -> Vec<f64> {
        phi.iter()
            .map(|&p| {
                if p <= 0.0 {
                    0.0
                } else {
                    (-(cp * t as f64 / (std::f64::consts::E * p)).floor()).exp()
                }
            })
            .collect()
    };
    let w = least_horizon(opts, |h, t| {
        let wt = weights(t);
        if sets.max_weight(&wt) >= 0.25 && sets.minimal.is_none() {
            return Ok(None);
        }
        let worst = match &sets.minimal {
            Some(list) => {
                let mut worst: f64 = 0.0;
                for s in list {
                    let sw: f64 = s.iter().map(|&i| wt[i]).sum();
                    if sw >= 0.25 {
                        return Ok(None);
                    }
                    worst = worst.max(sw + tails.joint_tail(s, h, t)?);
                    if worst >= 0.25 {
                        return Ok(None);
                    }
                }
                worst
            }
            None => sets.max_weight(&wt) + tails.worst_joint_tail(&sets, h, t)?.0,
        };
        Ok(Some(worst))
    })?;
    let value = 4.0 / 3.0 * constants.c_alpha * w.horizon as f64;
    let mut r = BoundResult::formula(
        "basic2",
        value,
        !constants.calibrated,
        &[
            ("T", w.horizon as f64),
            ("t", w.t as f64),
            ("objective", w.objective),
            ("alpha", alpha),
            ("c_alpha", constants.c_alpha),
            ("c_alpha_prime", cp),
            ("max_minimal_set_size", sets.max_size as f64),
        ],
    );
    if sets.minimal.is_none() {
        r.notes.push("block sets searched heuristically (not enumerated)".into());
    }
    r.ingredients.insert("phi_max".into(), phi.iter().cloned().fold(0.0, f64::max));
    Ok(r.with_tails(tails.provenance()))
}

/// `min_i min_{x in Omega_i} P_x[tau_esc > eps * phi_max]` and the matching
/// `1 - max_i max_x P_x[...]`, from exact escape tails.
pub fn escape_regularity(
    kernel: &StochasticKernel,
    partition: &Partition,
    epsilon: f64,
    phi_max: f64,
) -> Result<(f64, f64)> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter("epsilon must be positive".into()));
    }
    let s = (epsilon * phi_max).floor() as u64;
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for i in 0..partition.n_blocks() {
        let e = escape_analysis(kernel, partition, i, s)?;
        lo = lo.min(e.min_tail(s as usize));
        hi = hi.max(e.max_tail(s as usize));
    }
    Ok((lo, 1.0 - hi))
}

/// `C eps^-1 delta^-1 phi_bar_hit n log(max(n, 2))`.
pub fn bound_regular(
    epsilon: f64,
    delta: f64,
    phi_bar_hit: f64,
    n: usize,
    envelope: f64,
    hypothesis_verified: bool,
    constants: &PeresSousiConstants,
) -> Result<BoundResult> {
    if !(epsilon > 0.0 && delta > 0.0 && phi_bar_hit >= 0.0 && n >= 1 && envelope > 0.0) {
        return Err(Error::InvalidParameter("regular bound inputs must be positive".into()));
    }
    let nf = n as f64;
    let value = envelope * phi_bar_hit * nf * nf.max(2.0).ln() / (epsilon * delta);
    let mut r = BoundResult::formula(
        "regular",
        value,
        !constants.calibrated,
        &[
            ("epsilon", epsilon),
            ("delta", delta),
            ("phi_bar_hit", phi_bar_hit),
            ("n", nf),
            ("envelope", envelope),
            ("hypothesis_verified", hypothesis_verified as u8 as f64),
        ],
    );
    if !hypothesis_verified {
        r.notes.push("warning: escape hypothesis not verified (HypothesisUnverified)".into());
    }
    Ok(r)
}

/// `eps phi_max D (c delta)^-D`.
pub fn graph_hit_formula(epsilon: f64, delta: f64, c: f64, diameter: usize, phi_max: f64) -> f64 {
    if diameter == 0 {
        return 0.0;
    }
    let d = diameter as f64;
    epsilon * phi_max * d * (c * delta).powf(-d)
}

/// The block graph with edges `i -> j` when every start in `Omega_i`
/// exits into `Omega_j` with probability at least `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockGraph {
    pub c: f64,
    pub edges: Vec<(usize, usize)>,
    pub diameter: Option<usize>,
}

/// Directed diameter by BFS from every vertex; `None` if some pair is unreachable.
pub fn directed_diameter(n: usize, edges: &[(usize, usize)]) -> Option<usize> {
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        adj[i].push(j);
    }
    let mut diam = 0;
    for s in 0..n {
        let mut dist = vec![usize::MAX; n];
        dist[s] = 0;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        diam = diam.max(*dist.iter().max()?);
        if dist.contains(&usize::MAX) {
            return None;
        }
    }
    Some(diam)
}

/// Bound on the average hitting time from the block graph `G_c`, with
/// `delta = 1 - max_i max_x P_x[tau_esc > eps phi_max]`. Vertices are the
/// block indices.
pub fn bound_graph_hit(
    kernel: &StochasticKernel,
    partition: &Partition,
    c: f64,
    epsilon: f64,
    phi_max: f64,
) -> Result<(BlockGraph, BoundResult)> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::InvalidParameter(format!("c = {c} outside (0, 1]")));
    }
    let nb = partition.n_blocks();
    let mut edges = Vec::new();
    let mut delta: f64 = 1.0;
    if nb > 1 {
        let s = (epsilon * phi_max).floor() as u64;
        for i in 0..nb {
            let e = escape_analysis(kernel, partition, i, s)?;
            delta = delta.min(1.0 - e.max_tail(s as usize));
            for j in 0..nb {
                if j != i && e.min_exit_to(j) >= c {
                    edges.push((i, j));
                }
            }
        }
    }
    let diameter = directed_diameter(nb, &edges);
    let graph = BlockGraph { c, edges, diameter };
    let d = diameter.ok_or(Error::DisconnectedGc)?;
    if d > 0 && delta <= 0.0 {
        return Err(Error::InvalidParameter("escape tails give delta = 0; bound vacuous".into()));
    }
    let value = graph_hit_formula(epsilon, delta, c, d, phi_max);
    let r = BoundResult::formula(
        "graph_hit",
        value,
        false,
        &[("c", c), ("epsilon", epsilon), ("delta", delta), ("diameter", d as f64), ("phi_max", phi_max)],
    );
    Ok((graph, r))
}

/// A Lyapunov function with verified `E[V(X_{t+k}) | X_t] <= (1-a) V + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftCertificate {
    pub a: f64,
    pub b: f64,
    pub k: u32,
    pub v: Vec<f64>,
    pub v_max: f64,
    /// `max_x (K^k V)(x) - (1-a) V(x) - b`; nonpositive when verified.
    pub max_violation: f64,
    pub verified: bool,
}

/// Checks the drift condition state by state with exact expectations.
pub fn verify_drift(kernel: &StochasticKernel, v: &[f64], a: f64, b: f64, k: u32) -> Result<DriftCertificate> {
    let n = kernel.n_states();
    if v.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: v.len() });
    }
    if !(a > 0.0 && a <= 1.0 && b >= 0.0 && k >= 1) || v.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidParameter("need 0 < a <= 1, b >= 0, k >= 1, V > 0".into()));
    }
    let mut kv = v.to_vec();
    for _ in 0..k {
        kv = kernel.apply(&kv);
    }
    let max_violation = (0..n)
        .map(|x| kv[x] - (1.0 - a) * v[x] - b)
        .fold(f64::NEG_INFINITY, f64::max);
    let scale = v.iter().cloned().fold(0.0, f64::max).max(1.0);
    Ok(DriftCertificate {
        a,
        b,
        k,
        v: v.to_vec(),
        v_max: v.iter().cloned().fold(0.0, f64::max),
        max_violation,
        verified: max_violation <= 1e-12 * scale,
    })
}

/// States of the sublevel set `{V <= level}`.
pub fn sublevel_set(v: &[f64], level: f64) -> Vec<usize> {
    (0..v.len()).filter(|&x| v[x] <= level).collect()
}

/// `(16 c / 3a) max(16 tau' / c', k log(16 V_max), 8 log 16)`, requiring
/// `M >= 4b/a` for the sublevel set on which `tau'` was measured.
pub fn bound_drift(
    drift: &DriftCertificate,
    level: f64,
    tau_mix_trace: f64,
    constants: &PeresSousiConstants,
) -> Result<BoundResult> {
    if !drift.verified {
        return Err(Error::DriftViolated(format!("max violation {:.3e}", drift.max_violation)));
    }
    let required = 4.0 * drift.b / drift.a;
    if level < required {
        return Err(Error::MTooSmall { m: level, required });
    }
    let terms = [
        16.0 * tau_mix_trace / constants.c_alpha_prime,
        drift.k as f64 * (16.0 * drift.v_max).ln(),
        8.0 * 16f64.ln(),
    ];
    let value = 16.0 * constants.c_alpha / (3.0 * drift.a) * terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(BoundResult::formula(
        "drift",
        value,
        !constants.calibrated,
        &[
            ("a", drift.a),
            ("b", drift.b),
            ("k", drift.k as f64),
            ("V_max", drift.v_max),
            ("M", level),
            ("tau_mix_trace", tau_mix_trace),
            ("c_alpha", constants.c_alpha),
            ("c_alpha_prime", constants.c_alpha_prime),
        ],
    ))
}

/// Inputs of the contraction bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionInputs {
    pub alpha: f64,
    pub beta: f64,
    pub a1: f64,
    pub a2: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub phi_max: f64,
    pub phi_bar: f64,
    pub d_max: f64,
    pub n: usize,
}

/// `C1 phi_max log(n) max(C2 phi_bar + 1, C3 / |log(1 - alpha)|)` with
/// `C1 = (1024/gamma) c (a2/delta2) log 16 / |log(1 - delta1^ceil(8e/(a1 c')))|`,
/// `gamma = 1/2 - beta/alpha`, `C2 = log2(8/gamma)`, `C3 = log(8/gamma) + log(D_max)`.
pub fn bound_contraction(inp: &ContractionInputs, constants: &PeresSousiConstants) -> Result<BoundResult> {
    let ContractionInputs { alpha, beta, a1, a2, delta1, delta2, phi_max, phi_bar, d_max, n } = *inp;
    if !(alpha > 0.0 && alpha <= 1.0 && beta >= 0.0) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha}, beta = {beta}")));
    }
    if beta >= alpha / 2.0 {
        return Err(Error::ContractionTooWeak { beta, half_alpha: alpha / 2.0 });
    }
    if !(a1 > 0.0 && a2 > 0.0 && delta1 > 0.0 && delta1 < 1.0 && delta2 > 0.0 && d_max >= 1.0 && n >= 1) {
        return Err(Error::InvalidParameter("need a1, a2, delta2 > 0, delta1 in (0,1), D_max >= 1".into()));
    }
    let gamma = 0.5 - beta / alpha;
    let eps = 0.25 - gamma / 16.0;
    let power = (8.0 * std::f64::consts::E / (a1 * constants.c_alpha_prime)).ceil();
    let log_term = (1.0 - delta1.powf(power)).ln().abs();
    let c1 = 1024.0 / gamma * constants.c_alpha * (a2 / delta2) * 16f64.ln() / log_term;
    let c2 = (8.0 / gamma).log2();
    let c3 = (8.0 / gamma).ln() + d_max.ln();
    let contraction_term = if alpha >= 1.0 { 0.0 } else { c3 / (1.0 - alpha).ln().abs() };
    let value = c1 * phi_max * (n as f64).ln() * (c2 * phi_bar + 1.0).max(contraction_term);
    Ok(BoundResult::formula(
        "contraction",
        value,
        !constants.calibrated,
        &[
            ("alpha", alpha),
            ("beta", beta),
            ("gamma", gamma),
            ("epsilon", eps),
            ("a1", a1),
            ("a2", a2),
            ("delta1", delta1),
            ("delta2", delta2),
            ("phi_max", phi_max),
            ("phi_bar", phi_bar),
            ("D_max", d_max),
            ("n", n as f64),
            ("C1", c1),
            ("C2", c2),
            ("C3", c3),
        ],
    ))
}

/// `ceil(e T) ceil(log(4(1-eps)/(1-4 eps)))` steps to couple with a fixed point.
pub fn bound_coupling_point(expected_hit: f64, epsilon: f64) -> Result<BoundResult> {
    if epsilon >= 0.25 {
        return Err(Error::EpsilonTooLarge(epsilon));
    }
    if !(expected_hit >= 1.0 && epsilon >= 0.0) {
        return Err(Error::InvalidParameter("need T >= 1 and eps >= 0".into()));
    }
    let reps = (4.0 * (1.0 - epsilon) / (1.0 - 4.0 * epsilon)).ln().ceil();
    let value = (std::f64::consts::E * expected_hit).ceil() * reps;
    Ok(BoundResult::formula("coupling_point", value, false, &[("T", expected_hit), ("epsilon", epsilon)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::stationary_distribution;
    use approx::assert_abs_diff_eq;

    fn two_block() -> (StochasticKernel, Partition) {
        let k = StochasticKernel::from_rows(vec![
            vec![0.5, 0.5, 0.0],
            vec![0.25, 0.5, 0.25],
            vec![0.0, 0.5, 0.5],
        ])
        .unwrap();
        (k, Partition::new(vec![0, 0, 1]).unwrap())
    }

    #[test]
    fn grid_shape() {
        let g = log_grid(1000, 64);
        assert_eq!(g[0], 1);
        assert_eq!(*g.last().unwrap(), 999);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(log_grid(1, 64).is_empty());
        assert_eq!(log_grid(2, 64), vec![1]);
    }

    #[test]
    fn single_block_degenerate_tail() {
        // tail 0 for t <= T/2: need phi/(T/2) < 1/4 at best, so T* is about 8 phi
        let tails = FnTails { n_blocks: 1, f: |_: &[usize], h: u64, t: u64| if 2 * t <= h { 0.0 } else { 1.0 } };
        let c = PeresSousiConstants::default();
        let phi = 50.0;
        let r = bound_basic(&[phi], &tails, &[1.0], 0.25, 0.9, &[0], &c, &SearchOptions::default()).unwrap();
        let t_star = r.ingredients["T"];
        // the log grid over t has ratio about 1.1 between points
        assert!(t_star > 8.0 * phi && t_star <= 1.12 * 8.0 * phi, "{t_star}");
        assert_abs_diff_eq!(r.value, 4.0 / 3.0 * t_star);
        assert!(r.universal_constant_flag);
        // the joint version needs floor(t / (e phi)) >= 2, so t >= 272 and T >= 544
        let r2 = bound_basic2(&[phi], &tails, &[1.0], 0.25, &c, &SearchOptions::default()).unwrap();
        let t2 = r2.ingredients["T"];
        assert!((544.0..=1.12 * 544.0).contains(&t2), "{t2}");
    }

    #[test]
    fn preconditions() {
        let tails = FnTails { n_blocks: 1, f: |_: &[usize], _: u64, _: u64| 0.0 };
        let c = PeresSousiConstants::default();
        let o = SearchOptions::default();
        assert!(bound_basic(&[1.0], &tails, &[1.0], 0.6, 0.9, &[0], &c, &o).is_err());
        assert!(bound_basic(&[1.0], &tails, &[1.0], 0.25, 0.7, &[0], &c, &o).is_err());
        assert!(bound_basic(&[1.0], &tails, &[0.8], 0.25, 0.9, &[0], &c, &o).is_err());
        let never = FnTails { n_blocks: 1, f: |_: &[usize], _: u64, _: u64| 1.0 };
        let small = SearchOptions { max_horizon: 64, grid_points: 64 };
        assert_eq!(
            bound_basic(&[1.0], &never, &[1.0], 0.25, 0.9, &[0], &c, &small),
            Err(Error::NoFeasibleT(64))
        );
    }

    #[test]
    fn exact_tails_on_small_chain() {
        let (k, p) = two_block();
        let pi = stationary_distribution(&k).unwrap();
        let masses = p.block_masses(&pi);
        let tails = ExactTails::new(&k, &p, 4096, 512).unwrap();
        let c = PeresSousiConstants::default();
        let o = SearchOptions::default();
        let r = bound_basic(&[3.0, 0.0], &tails, &masses, 0.3, 0.9, &[0, 1], &c, &o).unwrap();
        assert!(r.value.is_finite() && r.value >= 1.0);
        assert_eq!(r.tails, Some(TailProvenance::Exact));
        let r2 = bound_basic2(&[3.0, 0.0], &tails, &masses, 0.3, &c, &o).unwrap();
        assert!(r2.value.is_finite());
        // a pointwise larger tail can only push the horizon out
        let worse = FnTails { n_blocks: 2, f: |b: &[usize], h: u64, t: u64| {
            (tails.joint_tail(b, h, t).unwrap() * 1.5).min(1.0)
        } };
        assert!(bound_basic2(&[3.0, 0.0], &worse, &masses, 0.3, &c, &o).unwrap().value >= r2.value);
    }

    #[test]
    fn regular_formula() {
        let c = PeresSousiConstants::default();
        let r = bound_regular(1.0, 1.0, 10.0, 2, 1.0, true, &c).unwrap();
        assert_abs_diff_eq!(r.value, 20.0 * 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.value, 13.86, epsilon = 5e-3);
        assert!(bound_regular(1.0, 1.0, 10.0, 2, 1.0, false, &c).unwrap().notes[0].contains("Unverified"));
    }

    #[test]
    fn graph_hit_formula_example() {
        assert_abs_diff_eq!(graph_hit_formula(1.0, 0.5, 0.5, 2, 10.0), 320.0, epsilon = 1e-9);
        assert_eq!(graph_hit_formula(1.0, 0.5, 0.5, 0, 10.0), 0.0);
    }

    #[test]
    fn graph_hit_on_chains() {
        let (k, p) = two_block();
        let (g, r) = bound_graph_hit(&k, &p, 0.5, 1.0, 4.0).unwrap();
        assert_eq!(g.edges, vec![(0, 1), (1, 0)]);
        assert_eq!(g.diameter, Some(1));
        assert!(r.value > 0.0);
        let one = Partition::single_block(3);
        let (g1, r1) = bound_graph_hit(&k, &one, 0.5, 1.0, 4.0).unwrap();
        assert_eq!(g1.diameter, Some(0));
        assert_eq!(r1.value, 0.0);
        assert_eq!(directed_diameter(3, &[(0, 1), (1, 0)]), None);
        assert_eq!(directed_diameter(3, &[(0, 1), (1, 2), (2, 0)]), Some(2));
    }

    #[test]
    fn drift_formula_example() {
        let k = StochasticKernel::from_rows(vec![vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        // V = (2, 16): K V = (2, 2) <= V/2 + 1
        let cert = verify_drift(&k, &[2.0, 16.0], 0.5, 1.0, 1).unwrap();
        assert!(cert.verified);
        assert_eq!(cert.v_max, 16.0);
        let c = PeresSousiConstants::default();
        let r = bound_drift(&cert, 8.0, 10.0, &c).unwrap();
        assert_abs_diff_eq!(r.value, 32.0 / 3.0 * 160.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.value, 1706.7, epsilon = 0.05);
        assert!(matches!(bound_drift(&cert, 7.9, 10.0, &c), Err(Error::MTooSmall { .. })));
        let bad = verify_drift(&k, &[2.0, 16.0], 0.9, 0.0, 1).unwrap();
        assert!(!bad.verified);
        assert!(matches!(bound_drift(&bad, 100.0, 10.0, &c), Err(Error::DriftViolated(_))));
    }

    #[test]
    fn drift_log_regime_is_linear_in_log_v() {
        let c = PeresSousiConstants::default();
        let mk = |lv: f64| DriftCertificate {
            a: 0.5,
            b: 0.0,
            k: 1,
            v: vec![lv.exp()],
            v_max: lv.exp(),
            max_violation: 0.0,
            verified: true,
        };
        let r1 = bound_drift(&mk(100.0), 1.0, 0.0, &c).unwrap().value;
        let r2 = bound_drift(&mk(200.0), 1.0, 0.0, &c).unwrap().value;
        let per = 32.0 / 3.0;
        assert_abs_diff_eq!(r2 - r1, per * 100.0, epsilon = 1e-6);
    }

    #[test]
    fn contraction_formula() {
        let c = PeresSousiConstants::default();
        let m = 4.0;
        let base = ContractionInputs {
            alpha: 1.0 - 1.0 / (2.0 * m),
            beta: 1.0 / (m * m * m),
            a1: 1.0,
            a2: 1.0,
            delta1: 0.5,
            delta2: 0.5,
            phi_max: 10.0,
            phi_bar: 2.0 * m * m.ln(),
            d_max: m,
            n: 16,
        };
        let r = bound_contraction(&base, &c).unwrap();
        assert!(r.value.is_finite() && r.value > 0.0);
        let gamma = 0.5 - base.beta / base.alpha;
        assert_abs_diff_eq!(r.ingredients["gamma"], gamma);
        // hand evaluation: power ceil(8e) = 22
        let c1 = 1024.0 / gamma * 2.0 * 16f64.ln() / (1.0 - 0.5f64.powi(22)).ln().abs();
        let c2 = (8.0 / gamma).log2();
        let c3 = (8.0 / gamma).ln() + m.ln();
        let want = c1 * 10.0 * 16f64.ln() * (c2 * base.phi_bar + 1.0).max(c3 / (1.0 - base.alpha).ln().abs());
        assert_abs_diff_eq!(r.value, want, epsilon = 1e-6 * want);
        // gamma -> 0 blows up
        let near = ContractionInputs { beta: base.alpha / 2.0 - 1e-9, ..base };
        assert!(bound_contraction(&near, &c).unwrap().value > 1e6 * r.value);
        let weak = ContractionInputs { beta: base.alpha / 2.0, ..base };
        assert!(matches!(bound_contraction(&weak, &c), Err(Error::ContractionTooWeak { .. })));
    }

    #[test]
    fn coupling_example() {
        assert_eq!(bound_coupling_point(1.0, 0.0).unwrap().value, 6.0);
        assert!(bound_coupling_point(1.0, 0.2499).unwrap().value > bound_coupling_point(1.0, 0.2).unwrap().value);
        assert_eq!(bound_coupling_point(1.0, 0.25), Err(Error::EpsilonTooLarge(0.25)));
    }

    #[test]
    fn constants_parse() {
        let c = PeresSousiConstants::parse("c_alpha=2.5, c_alpha_prime=0.5").unwrap();
        assert_eq!(c, PeresSousiConstants { c_alpha: 2.5, c_alpha_prime: 0.5, calibrated: true });
        assert!(PeresSousiConstants::parse("c_alpha=-1").is_err());
        assert!(PeresSousiConstants::parse("c_beta=1").is_err());
        assert!(!PeresSousiConstants::parse("").unwrap().calibrated);
    }
}
