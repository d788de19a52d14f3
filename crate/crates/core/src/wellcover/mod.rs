//! Well-covering times of a projected kernel: an exact small-`n` oracle,
//! certified upper bounds, comparison transforms and the bootstrap
//! mixing bound built on them.

mod audit;
mod oracle;

pub use audit::{
    concentration_audit, local_to_global_audit, local_to_global_b, ConcentrationAudit, ConcentrationRow,
    LocalToGlobalAudit,
};
pub use oracle::{feasibility_oracle, matching_transitions, oracle_wc_time, OracleOutcome, Witness, ORACLE_BLOCK_LIMIT};

use std::collections::VecDeque;

use serde::{Serialize, Serializer};

use crate::bounds::{check_alpha_beta, BoundResult, PeresSousiConstants};
use crate::decomposition::{projected_kernel, Partition};
use crate::error::{Error, Result};
use crate::kernel::{check_reversible, stationary_distribution, StationaryDistribution, StochasticKernel};

pub const BOOTSTRAP_LIMIT: u64 = 1 << 60;

/// `tau_wc(t_1, ..., t_n, B)` for a projected kernel `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct WellCoveringQuery {
    pub projected: StochasticKernel,
    pub thresholds: Vec<f64>,
    pub b: f64,
}

impl WellCoveringQuery {
    pub fn new(projected: StochasticKernel, thresholds: Vec<f64>, b: f64) -> Result<Self> {
        let n = projected.n_states();
        if thresholds.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: thresholds.len() });
        }
        if thresholds.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::InvalidParameter("thresholds must be finite and nonnegative".into()));
        }
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::InvalidParameter(format!("B = {b} must be positive")));
        }
        Ok(Self { projected, thresholds, b })
    }

    pub fn n(&self) -> usize {
        self.projected.n_states()
    }

    pub fn stationary(&self) -> Result<Vec<f64>> {
        Ok(stationary_distribution(&self.projected)?.weights)
    }

    pub fn with_thresholds(&self, thresholds: Vec<f64>) -> Result<Self> {
        Self::new(self.projected.clone(), thresholds, self.b)
    }

    pub fn with_b(&self, b: f64) -> Result<Self> {
        Self::new(self.projected.clone(), self.thresholds.clone(), b)
    }
}

impl Serialize for WellCoveringQuery {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            projected: Vec<Vec<f64>>,
            thresholds: &'a [f64],
            b: f64,
        }
        Repr { projected: self.projected.to_rows(), thresholds: &self.thresholds, b: self.b }.serialize(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WcMethod {
    Oracle,
    Tree,
    Propagation,
    Comparison,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonStep {
    pub transform: String,
    pub factor: f64,
}

/// A certified upper bound `value >= tau_wc(query)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WellCoveringCertificate {
    pub value: f64,
    pub method: WcMethod,
    pub query: WellCoveringQuery,
    pub provenance: Vec<ComparisonStep>,
    /// Set when the method goes beyond what is proved for tree walks.
    pub extension: bool,
    pub grid_tolerance: Option<f64>,
}

pub fn oracle_certificate(query: &WellCoveringQuery, resolution: usize, max_horizon: u64) -> Result<WellCoveringCertificate> {
    let t = oracle_wc_time(query, resolution, max_horizon)?;
    Ok(WellCoveringCertificate {
        value: t as f64,
        method: WcMethod::Oracle,
        query: query.clone(),
        provenance: Vec::new(),
        extension: false,
        grid_tolerance: Some(if query.n() == 3 { 2.0 / resolution as f64 } else { 0.0 }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TreeWalk {
    pub n: usize,
    pub delta: f64,
    pub diameter: usize,
}

/// Recognises `Q(i,j) = 1/(2 Delta)` on the edges of a tree.
pub fn tree_walk(q: &StochasticKernel) -> Result<TreeWalk> {
    let n = q.n_states();
    if n == 1 {
        return Ok(TreeWalk { n, delta: 1.0, diameter: 0 });
    }
    let mut rate: Option<f64> = None;
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            let v = q.get(i, j);
            if i == j || v == 0.0 {
                continue;
            }
            match rate {
                None => rate = Some(v),
                Some(r) if (v - r).abs() > 1e-12 * r.max(1.0) => {
                    return Err(Error::NotTreeWalk(format!("unequal edge weights {r} and {v}")));
                }
                _ => {}
            }
            if q.get(j, i) == 0.0 {
                return Err(Error::NotTreeWalk(format!("edge ({i},{j}) is not symmetric")));
            }
            adj[i].push(j);
        }
    }
    let rate = rate.ok_or_else(|| Error::NotTreeWalk("no edges".into()))?;
    let edges: usize = adj.iter().map(Vec::len).sum::<usize>() / 2;
    if edges != n - 1 {
        return Err(Error::NotTreeWalk(format!("{edges} edges on {n} vertices")));
    }
    let delta = 1.0 / (2.0 * rate);
    let max_deg = adj.iter().map(Vec::len).max().unwrap_or(0);
    if max_deg as f64 > delta + 1e-9 {
        return Err(Error::NotTreeWalk(format!("degree {max_deg} exceeds Delta = {delta}")));
    }
    let mut diameter = 0;
    for s in 0..n {
        let mut dist = vec![usize::MAX; n];
        dist[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        if dist.contains(&usize::MAX) {
            return Err(Error::NotTreeWalk("graph is disconnected".into()));
        }
        diameter = diameter.max(*dist.iter().max().unwrap());
    }
    Ok(TreeWalk { n, delta, diameter })
}

/// `n max(1000 Delta^2 B^2 D^2, 4 phi)`.
pub fn tree_formula(walk: &TreeWalk, phi: f64, b: f64) -> f64 {
    let d = walk.diameter as f64;
    walk.n as f64 * (1e3 * walk.delta.powi(2) * b * b * d * d).max(4.0 * phi)
}

/// Tree bound for a query; unequal thresholds are covered by the largest.
pub fn tree_bound(query: &WellCoveringQuery) -> Result<WellCoveringCertificate> {
    let walk = tree_walk(&query.projected)?;
    let phi = query.thresholds.iter().copied().fold(0.0, f64::max);
    Ok(WellCoveringCertificate {
        value: tree_formula(&walk, phi, query.b),
        method: WcMethod::Tree,
        query: query.clone(),
        provenance: Vec::new(),
        extension: false,
        grid_tolerance: None,
    })
}

/// Lower bound on `kappa(j)` given `kappa(l) >= lower` along the edge `l -> j`.
fn propagate(lower: f64, q_lj: f64, q_jl: f64, b: f64, horizon: f64) -> f64 {
    let r = b / horizon.sqrt();
    // through N(l,j): kappa(j) Q(j,l) >= kappa(l) Q(l,j) - 2 r sqrt(kappa(l))
    let x = lower.max((r / q_lj).powi(2));
    let via_lj = ((x * q_lj - 2.0 * r * x.sqrt()) / q_jl).max(0.0);
    // through N(j,l): Q(j,l) y^2 + 2 r y >= kappa(l) Q(l,j), y = sqrt(kappa(j))
    let y = (-r + (r * r + q_jl * lower * q_lj).sqrt()) / q_jl;
    via_lj.max(y * y)
}

fn propagation_covers(query: &WellCoveringQuery, horizon: u64) -> bool {
    let n = query.n();
    let h = horizon as f64;
    let q = &query.projected;
    (0..n).all(|start| {
        let mut lower = vec![0.0; n];
        lower[start] = 1.0 / n as f64;
        for _ in 0..n {
            let mut changed = false;
            for l in 0..n {
                if lower[l] <= 0.0 {
                    continue;
                }
                for j in 0..n {
                    let (qlj, qjl) = (q.get(l, j), q.get(j, l));
                    if j == l || qlj <= 0.0 || qjl <= 0.0 {
                        continue;
                    }
                    let v = propagate(lower[l], qlj, qjl, query.b, h);
                    if v > lower[j] {
                        lower[j] = v;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        (0..n).all(|i| lower[i] > query.thresholds[i] / h)
    })
}

/// Least integer `T` at which lower bounds propagated from the
/// pigeonhole block clear every threshold. This extends the tree-walk
/// induction to arbitrary reversible `Q`; each step uses only the
/// defining constraints, so the value is a sound upper bound.
pub fn propagation_bound(query: &WellCoveringQuery, max_horizon: u64) -> Result<WellCoveringCertificate> {
    if !query.projected.is_irreducible() {
        return Err(Error::ReducibleKernel);
    }
    let mut lo = 0u64;
    let mut hi = 1u64;
    while !propagation_covers(query, hi) {
        lo = hi;
        hi = hi.checked_mul(2).filter(|&x| x <= max_horizon).ok_or(Error::NoFeasibleT(max_horizon))?;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if propagation_covers(query, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(WellCoveringCertificate {
        value: hi as f64,
        method: WcMethod::Propagation,
        query: query.clone(),
        provenance: Vec::new(),
        extension: true,
        grid_tolerance: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum WcTransform {
    /// Certificate for `Q'` to one for a faster `Q` with the same stationary measure.
    Monotone { target: StochasticKernel },
    /// Certificate for a 1/2-lazy `Q` to one for `alpha Q + (1 - alpha) Id`.
    Lazify { alpha: f64 },
    /// Thresholds multiplied by `alpha > 1`.
    ScaleThresholds { alpha: f64 },
    /// `B` multiplied by `alpha > 1`.
    ScaleB { alpha: f64 },
}

pub fn compare_wc(cert: &WellCoveringCertificate, transform: &WcTransform) -> Result<WellCoveringCertificate> {
    let base = &cert.query;
    let (query, label, factor) = match transform {
        WcTransform::Monotone { target } => {
            let n = base.n();
            if target.n_states() != n {
                return Err(Error::InvalidComparison(format!("target has {} states, base {n}", target.n_states())));
            }
            let mu = stationary_distribution(&base.projected)?;
            let mu_t = stationary_distribution(target)?;
            let gap = mu.weights.iter().zip(&mu_t.weights).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if gap > 1e-9 {
                return Err(Error::InvalidComparison(format!("stationary measures differ by {gap:.3e}")));
            }
            for (k, m) in [(&base.projected, &mu), (target, &mu)] {
                if !check_reversible(k, m)?.reversible {
                    return Err(Error::InvalidComparison("kernels must be reversible".into()));
                }
            }
            for i in 0..n {
                for j in 0..n {
                    if i != j && target.get(i, j) < base.projected.get(i, j) - 1e-12 {
                        return Err(Error::InvalidComparison(format!("target entry ({i},{j}) is below the base")));
                    }
                }
            }
            (WellCoveringQuery::new(target.clone(), base.thresholds.clone(), base.b)?, "monotone".to_string(), 9.0)
        }
        WcTransform::Lazify { alpha } => {
            let a = *alpha;
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::InvalidComparison(format!("laziness alpha = {a} must lie in (0, 1)")));
            }
            if !base.projected.is_half_lazy() {
                return Err(Error::InvalidComparison("base kernel is not 1/2-lazy".into()));
            }
            let mu = stationary_distribution(&base.projected)?;
            if !check_reversible(&base.projected, &mu)?.reversible {
                return Err(Error::InvalidComparison("base kernel must be reversible".into()));
            }
            let lazier = crate::kernel::lazify(&base.projected, a)?;
            (WellCoveringQuery::new(lazier, base.thresholds.clone(), base.b)?, format!("lazify({a})"), a.powi(-2))
        }
        WcTransform::ScaleThresholds { alpha } => {
            let a = *alpha;
            if !(a > 1.0 && a.is_finite()) {
                return Err(Error::InvalidComparison(format!("threshold scale {a} must exceed 1")));
            }
            (base.with_thresholds(base.thresholds.iter().map(|t| a * t).collect())?, format!("scale_thresholds({a})"), a)
        }
        WcTransform::ScaleB { alpha } => {
            let a = *alpha;
            if !(a > 1.0 && a.is_finite()) {
                return Err(Error::InvalidComparison(format!("B scale {a} must exceed 1")));
            }
            (base.with_b(a * base.b)?, format!("scale_b({a})"), a * a)
        }
    };
    let mut provenance = cert.provenance.clone();
    provenance.push(ComparisonStep { transform: label, factor });
    Ok(WellCoveringCertificate {
        value: cert.value * factor,
        method: WcMethod::Comparison,
        query,
        provenance,
        extension: cert.extension,
        grid_tolerance: cert.grid_tolerance,
    })
}

/// Any certified method producing an upper bound on `tau_wc`.
pub type WcProvider<'a> = dyn Fn(&WellCoveringQuery) -> Result<WellCoveringCertificate> + Sync + 'a;

/// `(4/3) c_alpha T` for the least `T` found with
/// `T > tau_wc(8 c' phi'_1, ..., 8 c' phi'_n, sqrt(8 phi_max ln(64 n^2 T)))`,
/// `phi'_i = phi_i 1{i in I}`. Only horizons where the condition was
/// checked are returned.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_mixing_bound(
    kernel: &StochasticKernel,
    pi: &StationaryDistribution,
    partition: &Partition,
    blocks: &[usize],
    alpha: f64,
    beta: f64,
    phi: &[f64],
    provider: &WcProvider,
    constants: &PeresSousiConstants,
) -> Result<BoundResult> {
    let gamma = check_alpha_beta(alpha, beta)?;
    let projected = projected_kernel(kernel, pi, partition)?;
    let n = partition.n_blocks();
    if phi.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: phi.len() });
    }
    if blocks.is_empty() || blocks.iter().any(|&i| i >= n) {
        return Err(Error::InvalidParameter("block set empty or out of range".into()));
    }
    let masses = partition.block_masses(pi);
    let mass: f64 = blocks.iter().map(|&i| masses[i]).sum();
    if mass < beta {
        return Err(Error::InvalidParameter(format!("pi(union I) = {mass} is below beta = {beta}")));
    }
    let phi_max = phi.iter().copied().fold(0.0, f64::max);
    if !(phi_max > 0.0) {
        return Err(Error::InvalidParameter("phi_max must be positive".into()));
    }
    let cp = constants.c_alpha_prime;
    let thresholds: Vec<f64> = (0..n).map(|i| if blocks.contains(&i) { 8.0 * cp * phi[i] } else { 0.0 }).collect();
    let b_of = |t: u64| (8.0 * phi_max * (64.0 * (n * n) as f64 * t as f64).ln()).sqrt();
    let check = |t: u64| -> Result<Option<WellCoveringCertificate>> {
        let q = WellCoveringQuery::new(projected.clone(), thresholds.clone(), b_of(t))?;
        let c = provider(&q)?;
        Ok(((t as f64) > c.value).then_some(c))
    };
    let mut lo = 1u64;
    let mut hi = 2u64;
    let mut cert = loop {
        if let Some(c) = check(hi)? {
            break c;
        }
        lo = hi;
        if hi >= BOOTSTRAP_LIMIT {
            return Err(Error::NoFixedPoint(BOOTSTRAP_LIMIT));
        }
        hi *= 2;
    };
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        match check(mid)? {
            Some(c) => {
                hi = mid;
                cert = c;
            }
            None => lo = mid,
        }
    }
    let value = 4.0 / 3.0 * constants.c_alpha * hi as f64;
    let mut r = BoundResult::formula(
        "bootstrap",
        value,
        !constants.calibrated,
        &[
            ("T", hi as f64),
            ("tau_wc", cert.value),
            ("B", cert.query.b),
            ("alpha", alpha),
            ("beta", beta),
            ("gamma", gamma),
            ("mass_I", mass),
            ("phi_max", phi_max),
            ("c_alpha", constants.c_alpha),
            ("c_alpha_prime", cp),
        ],
    );
    r.notes.push(format!("well-covering method: {:?}", cert.method).to_lowercase());
    if cert.extension {
        r.notes.push("well-covering certificate uses the propagation extension".into());
    }
    for s in &cert.provenance {
        r.notes.push(format!("comparison step {} (factor {})", s.transform, s.factor));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn path_walk(n: usize, delta: f64) -> StochasticKernel {
        let mut e = Vec::new();
        for i in 0..n - 1 {
            e.push((i, i + 1, 1.0 / (2.0 * delta)));
            e.push((i + 1, i, 1.0 / (2.0 * delta)));
        }
        StochasticKernel::from_off_diagonal(n, &e).unwrap()
    }

    #[test]
    fn tree_formula_examples() {
        let q = WellCoveringQuery::new(path_walk(4, 2.0), vec![1.0; 4], 1.0).unwrap();
        let c = tree_bound(&q).unwrap();
        assert_abs_diff_eq!(c.value, 144_000.0);
        let q = WellCoveringQuery::new(path_walk(2, 1.0), vec![1e6; 2], 0.01).unwrap();
        assert_abs_diff_eq!(tree_bound(&q).unwrap().value, 8e6);
    }

    #[test]
    fn tree_structure_rejected() {
        let k = StochasticKernel::from_rows(vec![vec![0.5, 0.25, 0.25], vec![0.25, 0.5, 0.25], vec![0.25, 0.25, 0.5]])
            .unwrap();
        assert!(matches!(tree_walk(&k), Err(Error::NotTreeWalk(_))));
        let k = StochasticKernel::from_rows(vec![vec![0.5, 0.5, 0.0], vec![0.25, 0.5, 0.25], vec![0.0, 0.5, 0.5]])
            .unwrap();
        assert!(matches!(tree_walk(&k), Err(Error::NotTreeWalk(_))));
        let w = tree_walk(&path_walk(5, 3.0)).unwrap();
        assert_eq!(w.diameter, 4);
        assert_abs_diff_eq!(w.delta, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn single_block_bounds() {
        let q = WellCoveringQuery::new(StochasticKernel::from_rows(vec![vec![1.0]]).unwrap(), vec![5.5], 2.0).unwrap();
        assert_eq!(propagation_bound(&q, 1 << 20).unwrap().value, 6.0);
        assert_eq!(oracle_certificate(&q, 64, 1 << 20).unwrap().value, 6.0);
        assert_abs_diff_eq!(tree_bound(&q).unwrap().value, 22.0);
    }

    #[test]
    fn oracle_below_tree_and_propagation() {
        for n in 2..=3 {
            for b in [0.5, 1.0, 2.0] {
                for phi in [1.0, 50.0] {
                    let q = WellCoveringQuery::new(path_walk(n, 2.0), vec![phi; n], b).unwrap();
                    let o = oracle_certificate(&q, 64, 1 << 40).unwrap().value;
                    let p = propagation_bound(&q, 1 << 40).unwrap().value;
                    let t = tree_bound(&q).unwrap().value;
                    assert!(o <= p && p <= t, "n={n} b={b} phi={phi}: {o} {p} {t}");
                }
            }
        }
    }

    #[test]
    fn propagation_within_twice_tree_on_paths() {
        for n in 2..=8 {
            let q = WellCoveringQuery::new(path_walk(n, 2.0), vec![3.0; n], 1.0).unwrap();
            let p = propagation_bound(&q, 1 << 50).unwrap();
            assert!(p.extension);
            assert!(p.value <= 2.0 * tree_bound(&q).unwrap().value);
        }
    }

    #[test]
    fn comparison_factors() {
        let q = WellCoveringQuery::new(path_walk(3, 2.0), vec![2.0; 3], 1.0).unwrap();
        let c = oracle_certificate(&q, 64, 1 << 40).unwrap();
        let m = compare_wc(&c, &WcTransform::Monotone { target: q.projected.clone() }).unwrap();
        assert_abs_diff_eq!(m.value, 9.0 * c.value);
        let l = compare_wc(&c, &WcTransform::Lazify { alpha: 0.5 }).unwrap();
        assert_abs_diff_eq!(l.value, 4.0 * c.value);
        let s = compare_wc(&l, &WcTransform::ScaleThresholds { alpha: 3.0 }).unwrap();
        assert_abs_diff_eq!(s.value, 12.0 * c.value);
        assert_eq!(s.provenance.len(), 2);
        assert_eq!(s.method, WcMethod::Comparison);
        let b = compare_wc(&c, &WcTransform::ScaleB { alpha: 2.0 }).unwrap();
        assert_abs_diff_eq!(b.value, 4.0 * c.value);
        assert!(compare_wc(&c, &WcTransform::ScaleB { alpha: 0.5 }).is_err());
        // different stationary measure
        let other = StochasticKernel::from_rows(vec![vec![0.5, 0.5, 0.0], vec![0.25, 0.5, 0.25], vec![0.0, 0.5, 0.5]])
            .unwrap();
        assert!(matches!(
            compare_wc(&c, &WcTransform::Monotone { target: other }),
            Err(Error::InvalidComparison(_))
        ));
        // a slower target is not allowed
        assert!(compare_wc(&c, &WcTransform::Monotone { target: path_walk(3, 4.0) }).is_err());
    }

    #[test]
    fn comparisons_are_sound_against_oracle() {
        let slow = WellCoveringQuery::new(path_walk(3, 3.0), vec![2.0; 3], 1.0).unwrap();
        let c = oracle_certificate(&slow, 64, 1 << 40).unwrap();
        let fast = compare_wc(&c, &WcTransform::Monotone { target: path_walk(3, 2.0) }).unwrap();
        assert!(oracle_certificate(&fast.query, 64, 1 << 40).unwrap().value <= fast.value);
        let lazy = compare_wc(&c, &WcTransform::Lazify { alpha: 0.5 }).unwrap();
        assert!(oracle_certificate(&lazy.query, 64, 1 << 40).unwrap().value <= lazy.value + 1.0);
    }

    #[test]
    fn bootstrap_single_block() {
        let k = StochasticKernel::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let pi = StationaryDistribution::uniform(2);
        let p = Partition::single_block(2);
        let provider = |q: &WellCoveringQuery| oracle_certificate(q, 64, 1 << 40);
        let c = PeresSousiConstants::default();
        let r = bootstrap_mixing_bound(&k, &pi, &p, &[0], 0.25, 0.8, &[3.0], &provider, &c).unwrap();
        // tau_wc = floor(8 phi) + 1 = 25, so T = 26
        assert_abs_diff_eq!(r.ingredients["T"], 26.0);
        assert_abs_diff_eq!(r.value, 4.0 / 3.0 * 26.0);
        assert!(r.universal_constant_flag);
    }

    #[test]
    fn bootstrap_monotone_in_phi() {
        let (k, p) = crate::zoo::pince_nez(4).unwrap();
        let pi = StationaryDistribution::uniform(8);
        let provider = |q: &WellCoveringQuery| oracle_certificate(q, 64, 1 << 50);
        let c = PeresSousiConstants::default();
        let mut last = 0.0;
        for phi in [1.0, 4.0, 16.0] {
            let r = bootstrap_mixing_bound(&k, &pi, &p, &[0, 1], 0.25, 0.8, &[phi, phi], &provider, &c).unwrap();
            assert!(r.value >= last);
            last = r.value;
        }
    }
}
