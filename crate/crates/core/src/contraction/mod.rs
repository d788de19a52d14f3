//! Exit distributions, Wasserstein distances between them, and the
//! contraction and occupation-regularity hypotheses built on them.

mod transport;

pub use transport::{transport, wasserstein, Transport, TRANSPORT_LIMIT};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::{escape_analysis, Partition};
use crate::error::{Error, Result};
use crate::kernel::StochasticKernel;
use crate::sim::replica_rng;

/// A metric on block indices with `1 <= d(i,j) <= d_max` off the diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMetric {
    n: usize,
    d: Vec<f64>,
    d_max: f64,
}

impl BlockMetric {
    pub fn from_matrix(n: usize, d: Vec<f64>) -> Result<Self> {
        if d.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, got: d.len() });
        }
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        let mut d_max: f64 = 0.0;
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return bad(format!("d({i},{i}) != 0"));
            }
            for j in 0..n {
                let v = d[i * n + j];
                if v != d[j * n + i] {
                    return bad(format!("d({i},{j}) != d({j},{i})"));
                }
                if i != j && !(v >= 1.0 && v.is_finite()) {
                    return bad(format!("d({i},{j}) = {v} outside [1, inf)"));
                }
                d_max = d_max.max(v);
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if d[i * n + k] > d[i * n + j] + d[j * n + k] + 1e-12 {
                        return bad(format!("triangle inequality fails at ({i},{j},{k})"));
                    }
                }
            }
        }
        Ok(Self { n, d, d_max })
    }

    /// Hamming distance between the `2^m` subsets of `[m]`, indexed by bit mask.
    pub fn hamming(m: usize) -> Self {
        let n = 1usize << m;
        let d = (0..n * n).map(|k| ((k / n) ^ (k % n)).count_ones() as f64).collect();
        Self { n, d, d_max: m as f64 }
    }

    /// `d(i,j) = |i - j|`.
    pub fn path(n: usize) -> Self {
        let d = (0..n * n).map(|k| (k / n).abs_diff(k % n) as f64).collect();
        Self { n, d, d_max: n.saturating_sub(1) as f64 }
    }

    pub fn discrete(n: usize) -> Self {
        let d = (0..n * n).map(|k| if k / n == k % n { 0.0 } else { 1.0 }).collect();
        Self { n, d, d_max: if n > 1 { 1.0 } else { 0.0 } }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }
}

/// `mu_x = 1/2 mu'_x + 1/2 delta_i`, where `mu'_x` is the law of the block
/// entered at the escape time from `x in Omega_i`.
pub fn exit_distribution(kernel: &StochasticKernel, partition: &Partition, x: usize) -> Result<Vec<f64>> {
    let i = partition.block_of(x);
    let e = escape_analysis(kernel, partition, i, 0)?;
    let k = e.states.iter().position(|&s| s == x).expect("member of its block");
    Ok(lazy_mixture(&e.exit_block_distribution[k], i))
}

/// `mu_x` for every state, in state order.
pub fn exit_distributions(kernel: &StochasticKernel, partition: &Partition) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::new(); kernel.n_states()];
    for i in 0..partition.n_blocks() {
        let e = escape_analysis(kernel, partition, i, 0)?;
        for (k, &x) in e.states.iter().enumerate() {
            out[x] = lazy_mixture(&e.exit_block_distribution[k], i);
        }
    }
    Ok(out)
}

fn lazy_mixture(exit: &[f64], i: usize) -> Vec<f64> {
    let mut mu: Vec<f64> = exit.iter().map(|p| 0.5 * p).collect();
    mu[i] += 0.5;
    mu
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coverage {
    ExactAllPairs,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEvidence {
    pub x: usize,
    pub y: usize,
    pub d: f64,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionEstimate {
    pub alpha: f64,
    pub beta: f64,
    /// Exact coverage and `beta < alpha / 2`.
    pub certified: bool,
    pub coverage: Coverage,
    pub pair_evidence: Vec<PairEvidence>,
    /// Evidence row with the largest `W - (1 - alpha) d`.
    pub worst_pair: Option<(usize, usize)>,
    /// `alpha - 2 beta`.
    pub margin: f64,
}

impl ContractionEstimate {
    /// Smallest `beta` with `W <= (1 - alpha) d + beta` on every evidence row.
    pub fn beta_at(&self, alpha: f64) -> f64 {
        beta_for(&self.pair_evidence, alpha)
    }

    /// Largest violation of the fitted inequality; `<= 1e-9` when certified.
    pub fn max_violation(&self) -> f64 {
        self.pair_evidence
            .iter()
            .map(|r| r.w - (1.0 - self.alpha) * r.d - self.beta)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn beta_for(rows: &[PairEvidence], alpha: f64) -> f64 {
    rows.iter().map(|r| r.w - (1.0 - alpha) * r.d).fold(0.0, f64::max)
}

pub const EXACT_PAIR_LIMIT: usize = 1_000_000;

/// Fits `(alpha, beta)` in `W_d(mu_x, mu_y) <= (1 - alpha) d(i,j) + beta`.
///
/// Every unordered pair of states (same-block pairs included) is evaluated
/// when `|Omega|^2 <= 10^6`; otherwise `pair_budget` pairs are drawn,
/// stratified over block pairs. Candidate `alpha` values are the grid
/// `{1 - 2^-k / m'} ∪ {j / 256}` plus each row's own breakpoint
/// `1 - W/d`; the candidate maximizing `alpha - 2 beta(alpha)` wins.
pub fn estimate_contraction(
    kernel: &StochasticKernel,
    partition: &Partition,
    metric: &BlockMetric,
    pair_budget: usize,
    seed: u64,
) -> Result<ContractionEstimate> {
    let nb = partition.n_blocks();
    if metric.n() != nb {
        return Err(Error::DimensionMismatch { expected: nb, got: metric.n() });
    }
    if pair_budget < nb {
        return Err(Error::InvalidParameter(format!("pair_budget {pair_budget} < n = {nb}")));
    }
    let mus = exit_distributions(kernel, partition)?;
    let n = kernel.n_states();
    let (pairs, coverage) = if n.saturating_mul(n) <= EXACT_PAIR_LIMIT {
        let p: Vec<(usize, usize)> = (0..n).flat_map(|x| (x..n).map(move |y| (x, y))).collect();
        (p, Coverage::ExactAllPairs)
    } else {
        (sample_pairs(partition, pair_budget, seed), Coverage::Sampled)
    };
    let pair_evidence: Vec<PairEvidence> = pairs
        .par_iter()
        .map(|&(x, y)| {
            let w = wasserstein(&mus[x], &mus[y], metric)?;
            let d = metric.d(partition.block_of(x), partition.block_of(y));
            Ok(PairEvidence { x, y, d, w })
        })
        .collect::<Result<_>>()?;

    let mut candidates: Vec<f64> = (1..=256).map(|j| j as f64 / 256.0).collect();
    for k in 0..=12 {
        for mp in 1..=64 {
            candidates.push(1.0 - 0.5f64.powi(k) / mp as f64);
        }
    }
    candidates.extend(pair_evidence.iter().filter(|r| r.d > 0.0).map(|r| 1.0 - r.w / r.d));
    candidates.retain(|a| *a > 0.0 && *a <= 1.0);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let (alpha, beta) = candidates
        .par_iter()
        .map(|&a| (a, beta_for(&pair_evidence, a)))
        .reduce_with(|p, q| {
            let (mp, mq) = (p.0 - 2.0 * p.1, q.0 - 2.0 * q.1);
            if mq > mp || (mq == mp && q.0 > p.0) {
                q
            } else {
                p
            }
        })
        .unwrap_or((0.0, 0.0));
    let worst_pair = pair_evidence
        .iter()
        .max_by(|r, s| (r.w - (1.0 - alpha) * r.d).total_cmp(&(s.w - (1.0 - alpha) * s.d)))
        .map(|r| (r.x, r.y));
    let certified = coverage == Coverage::ExactAllPairs && beta < alpha / 2.0;
    Ok(ContractionEstimate {
        alpha,
        beta,
        certified,
        coverage,
        pair_evidence,
        worst_pair,
        margin: alpha - 2.0 * beta,
    })
}

/// `budget` pairs spread evenly over the unordered block pairs.
fn sample_pairs(partition: &Partition, budget: usize, seed: u64) -> Vec<(usize, usize)> {
    let nb = partition.n_blocks();
    let strata: Vec<(usize, usize)> = (0..nb).flat_map(|i| (i..nb).map(move |j| (i, j))).collect();
    let mut rng = replica_rng(seed, 0);
    let mut out = Vec::with_capacity(budget);
    for k in 0..budget {
        let (i, j) = strata[k % strata.len()];
        let a = partition.members(i);
        let b = partition.members(j);
        out.push((a[rng.random_range(0..a.len())], b[rng.random_range(0..b.len())]));
    }
    out
}

/// Escape-tail hypotheses `min_x P_x[tau_esc > s1] >= delta1` and
/// `max_x P_x[tau_esc > s2] <= 1 - delta2` with `s = a phi_max log n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regularity {
    pub threshold1: f64,
    pub threshold2: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta1_positive: bool,
    pub delta2_positive: bool,
}

/// Largest block for which tails are raised to high powers by squaring.
pub const SQUARING_BLOCK_LIMIT: usize = 400;
/// Step cap for plain vector iteration on larger blocks.
pub const REGULARITY_HORIZON: u64 = 1 << 24;

/// Computes the best `delta1`, `delta2` for the given `a1`, `a2` exactly.
/// `n` is the number of blocks entering `log n`; thresholds are floored
/// since the escape time is integral.
pub fn occupation_regularity(
    kernel: &StochasticKernel,
    partition: &Partition,
    a1: f64,
    a2: f64,
    phi_max: f64,
    n: usize,
) -> Result<Regularity> {
    if !(a1 >= 0.0 && a2 >= 0.0 && phi_max >= 0.0) || n == 0 {
        return Err(Error::InvalidParameter("a1, a2, phi_max must be nonnegative, n >= 1".into()));
    }
    let log_n = (n as f64).ln();
    let threshold1 = a1 * phi_max * log_n;
    let threshold2 = a2 * phi_max * log_n;
    let s1 = floor_steps(threshold1)?;
    let s2 = floor_steps(threshold2)?;
    let mut min1 = f64::INFINITY;
    let mut max2: f64 = 0.0;
    for i in 0..partition.n_blocks() {
        let t1 = block_escape_tail(kernel, partition, i, s1)?;
        let t2 = block_escape_tail(kernel, partition, i, s2)?;
        min1 = min1.min(t1.iter().cloned().fold(f64::INFINITY, f64::min));
        max2 = max2.max(t2.iter().cloned().fold(0.0, f64::max));
    }
    let delta1 = min1;
    let delta2 = 1.0 - max2;
    Ok(Regularity {
        threshold1,
        threshold2,
        delta1,
        delta2,
        delta1_positive: delta1 > 0.0,
        delta2_positive: delta2 > 0.0,
    })
}

fn floor_steps(s: f64) -> Result<u64> {
    if s >= u64::MAX as f64 {
        return Err(Error::TooLarge { got: usize::MAX, limit: REGULARITY_HORIZON as usize });
    }
    Ok(s.floor() as u64)
}

/// `P_x[tau_esc > s]` for each `x` in block `i` (member order).
pub fn block_escape_tail(
    kernel: &StochasticKernel,
    partition: &Partition,
    i: usize,
    s: u64,
) -> Result<Vec<f64>> {
    let a = partition.members(i);
    let b = a.len();
    let mut local = vec![usize::MAX; kernel.n_states()];
    for (k, &x) in a.iter().enumerate() {
        local[x] = k;
    }
    if b <= SQUARING_BLOCK_LIMIT {
        let mut m = nalgebra::DMatrix::<f64>::zeros(b, b);
        for (r, &x) in a.iter().enumerate() {
            for &(y, p) in kernel.support(x) {
                if local[y] != usize::MAX {
                    m[(r, local[y])] += p;
                }
            }
        }
        let mut acc = nalgebra::DVector::<f64>::from_element(b, 1.0);
        let mut e = s;
        while e > 0 {
            if e & 1 == 1 {
                acc = &m * acc;
            }
            e >>= 1;
            if e > 0 {
                m = &m * &m;
            }
        }
        return Ok(acc.iter().map(|v| v.clamp(0.0, 1.0)).collect());
    }
    if s > REGULARITY_HORIZON {
        return Err(Error::TooLarge { got: s as usize, limit: REGULARITY_HORIZON as usize });
    }
    let mut cur = vec![1.0; b];
    for _ in 0..s {
        cur = a
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
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::torus_metropolis;
    use approx::assert_abs_diff_eq;

    #[test]
    fn metrics_validate() {
        assert_eq!(BlockMetric::hamming(3).d(0b011, 0b110), 2.0);
        assert_eq!(BlockMetric::hamming(3).d_max(), 3.0);
        assert!(BlockMetric::from_matrix(2, vec![0.0, 0.5, 0.5, 0.0]).is_err());
        assert!(BlockMetric::from_matrix(3, vec![0.0, 1.0, 5.0, 1.0, 0.0, 1.0, 5.0, 1.0, 0.0]).is_err());
        let p = BlockMetric::path(3);
        assert_eq!(BlockMetric::from_matrix(3, p.d.clone()).unwrap(), p);
    }

    #[test]
    fn single_exit_route() {
        // from state 1 the only way out of {0,1} is into block 1
        let k = StochasticKernel::from_rows(vec![
            vec![0.5, 0.5, 0.0],
            vec![0.25, 0.5, 0.25],
            vec![0.0, 0.5, 0.5],
        ])
        .unwrap();
        let p = Partition::new(vec![0, 0, 1]).unwrap();
        assert_eq!(exit_distribution(&k, &p, 1).unwrap(), vec![0.5, 0.5]);
        assert_eq!(exit_distribution(&k, &p, 2).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn identical_exit_laws_contract_fully() {
        let k = StochasticKernel::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let p = Partition::new(vec![0, 1]).unwrap();
        // mu_0 = mu_1 = (1/2, 1/2)
        let e = estimate_contraction(&k, &p, &BlockMetric::discrete(2), 2, 0).unwrap();
        assert_eq!((e.alpha, e.beta), (1.0, 0.0));
        assert!(e.certified);
    }

    #[test]
    fn torus_exit_laws_are_near_single_flips() {
        let t = torus_metropolis(3, 3, 7.0, Some(1)).unwrap();
        let origin = t.states.iter().position(|s| s.iter().all(|&u| u == 0)).unwrap();
        let mu = exit_distribution(&t.kernel, &t.partition, origin).unwrap();
        let off: f64 = (0..8).filter(|z: &usize| z.count_ones() != 1).map(|z| mu[z]).sum();
        assert_abs_diff_eq!(mu[0], 0.5, epsilon = 1e-12);
        assert!(off - 0.5 <= 0.05, "{off}");
    }

    #[test]
    fn torus_fit_is_exact_and_consistent() {
        let m = 3;
        let t = torus_metropolis(m, 3, 7.0, Some(1)).unwrap();
        let e = estimate_contraction(&t.kernel, &t.partition, &BlockMetric::hamming(m), 64, 1).unwrap();
        assert_eq!(e.coverage, Coverage::ExactAllPairs);
        assert_eq!(e.pair_evidence.len(), 64 * 65 / 2);
        assert!(e.max_violation() <= 1e-9);
        assert!(e.beta_at(1.0 - 1.0 / m as f64) > 0.05);
        assert!(e.margin >= e.beta_at(0.5).mul_add(-2.0, 0.5) - 1e-12);
    }

    #[test]
    fn untraced_torus_needs_large_beta() {
        let t = torus_metropolis(3, 3, 7.0, None).unwrap();
        let e = estimate_contraction(&t.kernel, &t.partition, &BlockMetric::hamming(3), 64, 1).unwrap();
        assert!(e.beta_at(1.0) >= 1.0 / 24.0);
    }

    #[test]
    fn zero_threshold_regularity() {
        let t = torus_metropolis(2, 3, 7.0, Some(1)).unwrap();
        let r = occupation_regularity(&t.kernel, &t.partition, 0.0, 0.0, 10.0, 4).unwrap();
        assert_eq!(r.delta1, 1.0);
        assert_eq!(r.delta2, 0.0);
    }

    #[test]
    fn squaring_matches_iteration() {
        let t = torus_metropolis(2, 3, 3.0, None).unwrap();
        let e = escape_analysis(&t.kernel, &t.partition, 0, 37).unwrap();
        let s = block_escape_tail(&t.kernel, &t.partition, 0, 37).unwrap();
        for (a, b) in s.iter().zip(&e.escape_tail[37]) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-13);
        }
    }
}
