use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BoundResult, PeresSousiConstants};
use crate::error::{Error, Result};
use crate::kernel::{hitting_analysis, mixing_profile, StationaryDistribution, StochasticKernel};
use crate::sim::replica_rng;

pub const EXACT_AUDIT_LIMIT: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubsetMode {
    Exact,
    Sampled { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeresSousiAudit {
    pub tau_mix: u64,
    /// `max_{z, A : pi(A) >= alpha} E_z[tau_A]`.
    pub max_hit: f64,
    pub argmax: Vec<usize>,
    /// `tau_mix / max_hit`.
    pub ratio: f64,
    pub subsets_evaluated: usize,
}

/// Compares the mixing time with the worst expected hitting time of a
/// large set. Only inclusion-minimal qualifying sets are solved, since
/// hitting a superset is never slower.
pub fn peres_sousi_audit(
    kernel: &StochasticKernel,
    pi: &StationaryDistribution,
    alpha: f64,
    mode: SubsetMode,
    horizon: u64,
) -> Result<PeresSousiAudit> {
    let n = kernel.n_states();
    if pi.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: pi.len() });
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let w = &pi.weights;
    let qualifies = |set: &[usize]| set.iter().map(|&x| w[x]).sum::<f64>() >= alpha - 1e-12;
    let minimal = |set: &[usize]| {
        let m: f64 = set.iter().map(|&x| w[x]).sum();
        set.iter().all(|&x| m - w[x] < alpha - 1e-12)
    };
    let mut candidates: Vec<Vec<usize>> = Vec::new();
    match mode {
        SubsetMode::Exact => {
            if n > EXACT_AUDIT_LIMIT {
                return Err(Error::TooLarge { got: n, limit: EXACT_AUDIT_LIMIT });
            }
            for mask in 1u32..(1u32 << n) {
                let set: Vec<usize> = (0..n).filter(|&x| mask & (1 << x) != 0).collect();
                if qualifies(&set) && minimal(&set) {
                    candidates.push(set);
                }
            }
        }
        SubsetMode::Sampled { samples, seed } => {
            let mut rng = replica_rng(seed, 0);
            for _ in 0..samples {
                let mut order: Vec<usize> = (0..n).collect();
                rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
                let keep = rng.random_range(1..=n);
                let mut set: Vec<usize> = Vec::new();
                for &x in &order {
                    if set.len() >= keep && qualifies(&set) {
                        break;
                    }
                    set.push(x);
                }
                // trim to an inclusion-minimal set
                let mut i = 0;
                while i < set.len() {
                    let mut t = set.clone();
                    t.remove(i);
                    if !t.is_empty() && qualifies(&t) {
                        set = t;
                    } else {
                        i += 1;
                    }
                }
                set.sort_unstable();
                candidates.push(set);
            }
            candidates.sort();
            candidates.dedup();
        }
    }
    let mut max_hit = 0.0;
    let mut argmax = Vec::new();
    for set in &candidates {
        let h = hitting_analysis(kernel, set, 0)?.max_expected();
        if h > max_hit || argmax.is_empty() {
            max_hit = h;
            argmax = set.clone();
        }
    }
    let prof = mixing_profile(kernel, pi, horizon)?;
    let tau_mix = prof.mixing_time.ok_or(Error::NoFeasibleT(horizon))?;
    let ratio = tau_mix as f64 / max_hit;
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::AssertionFailed(format!("mixing/hitting ratio {ratio} not finite and positive")));
    }
    Ok(PeresSousiAudit { tau_mix, max_hit, argmax, ratio, subsets_evaluated: candidates.len() })
}

/// Constants fitted so that every supplied bound reaches `tau_mix` on a
/// reference chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub reference: String,
    pub tau_mix: f64,
    pub constants: PeresSousiConstants,
    /// Multiplier for the `regular` envelope constant.
    pub envelope: f64,
    /// `tau_mix / value` for each bound at unit constants.
    pub factors: BTreeMap<String, f64>,
}

/// Fits `c_alpha` (and the `regular` envelope) from bounds evaluated with
/// `c_alpha = 1` and envelope 1 on the reference chain. Each of those
/// bounds is linear in its constant, so scaling by the largest
/// `tau_mix / value` makes every one of them at least `tau_mix` there.
pub fn calibrate(reference: &str, tau_mix: f64, unit_bounds: &[BoundResult], c_alpha_prime: f64) -> Result<Calibration> {
    let mut factors = BTreeMap::new();
    let mut c_alpha: f64 = 0.0;
    let mut envelope = 1.0;
    for b in unit_bounds {
        if !(b.value > 0.0 && b.value.is_finite()) {
            return Err(Error::InvalidParameter(format!("bound {} has value {}", b.name, b.value)));
        }
        let f = tau_mix / b.value;
        factors.insert(b.name.clone(), f);
        if b.name == "regular" {
            envelope = f;
        } else {
            c_alpha = c_alpha.max(f);
        }
    }
    if c_alpha == 0.0 {
        c_alpha = 1.0;
    }
    Ok(Calibration {
        reference: reference.into(),
        tau_mix,
        constants: PeresSousiConstants::new(c_alpha, c_alpha_prime, true)?,
        envelope,
        factors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_state_example() {
        let k = StochasticKernel::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let pi = StationaryDistribution::uniform(2);
        let a = peres_sousi_audit(&k, &pi, 0.25, SubsetMode::Exact, 100).unwrap();
        assert_eq!(a.tau_mix, 1);
        assert_abs_diff_eq!(a.max_hit, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.ratio, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn whole_space_only_when_alone() {
        // alpha = 1 leaves A = Omega as the only set, with hitting time 0
        let k = StochasticKernel::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let pi = StationaryDistribution::uniform(2);
        let a = peres_sousi_audit(&k, &pi, 1.0, SubsetMode::Exact, 100);
        assert!(matches!(a, Err(Error::AssertionFailed(_))));
    }

    #[test]
    fn sampled_never_exceeds_exact() {
        let (k, _) = crate::zoo::pince_nez(4).unwrap();
        let pi = StationaryDistribution::uniform(8);
        let e = peres_sousi_audit(&k, &pi, 0.25, SubsetMode::Exact, 10_000).unwrap();
        let s = peres_sousi_audit(&k, &pi, 0.25, SubsetMode::Sampled { samples: 200, seed: 1 }, 10_000).unwrap();
        assert!(s.max_hit <= e.max_hit + 1e-9);
        assert!(matches!(
            peres_sousi_audit(&k, &pi, 0.25, SubsetMode::Exact, 10).map(|_| ()),
            Err(Error::NoFeasibleT(10)) | Ok(())
        ));
    }

    #[test]
    fn calibration_lifts_every_bound() {
        let mk = |name: &str, v: f64| BoundResult::formula(name, v, true, &[]);
        let c = calibrate("ref", 100.0, &[mk("basic", 50.0), mk("drift", 400.0), mk("regular", 20.0)], 1.0).unwrap();
        assert_abs_diff_eq!(c.constants.c_alpha, 2.0);
        assert_abs_diff_eq!(c.envelope, 5.0);
        assert!(c.constants.calibrated);
    }
}
