use proptest::prelude::*;

use mixdecomp::bounds::{bound_basic, bound_basic2, FnTails, PeresSousiConstants, SearchOptions};
use mixdecomp::decomposition::{decompose, trace_on};
use mixdecomp::kernel::{stationary_distribution, StochasticKernel};
use mixdecomp::wellcover::{
    compare_wc, local_to_global_audit, local_to_global_b, oracle_certificate, WcTransform, WellCoveringQuery,
};
use mixdecomp::zoo::{pince_nez, random_reversible};

const OPTS: SearchOptions = SearchOptions { max_horizon: 1 << 30, grid_points: 64 };

fn unit() -> PeresSousiConstants {
    PeresSousiConstants::new(1.0, 1.0, false).unwrap()
}

fn decaying(n_blocks: usize, scale: f64) -> FnTails<impl Fn(&[usize], u64, u64) -> f64 + Sync> {
    FnTails { n_blocks, f: move |_: &[usize], h: u64, _t: u64| (-(h as f64) / scale).exp() }
}

fn two_state(p: f64, q: f64) -> StochasticKernel {
    StochasticKernel::from_off_diagonal(2, &[(0, 1, p), (1, 0, q)]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn basic_monotone_in_phi(
        phi in prop::collection::vec(1.0f64..200.0, 3),
        bump in prop::collection::vec(0.0f64..100.0, 3),
        scale in 5.0f64..500.0,
    ) {
        let masses = [0.5, 0.35, 0.15];
        let tails = decaying(3, scale);
        let lo = bound_basic(&phi, &tails, &masses, 0.25, 0.8, &[0, 1], &unit(), &OPTS).unwrap();
        let up: Vec<f64> = phi.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let hi = bound_basic(&up, &tails, &masses, 0.25, 0.8, &[0, 1], &unit(), &OPTS).unwrap();
        prop_assert!(hi.value >= lo.value);
    }

    #[test]
    fn basic_scales_with_time(phi in 1.0f64..300.0, scale in 5.0f64..500.0, s in 1u64..8) {
        let masses = [0.9, 0.1];
        let base = bound_basic(&[phi, 1.0], &decaying(2, scale), &masses, 0.25, 0.8, &[0], &unit(), &OPTS).unwrap();
        let sf = s as f64;
        let scaled =
            bound_basic(&[sf * phi, sf], &decaying(2, sf * scale), &masses, 0.25, 0.8, &[0], &unit(), &OPTS).unwrap();
        let (t1, ts) = (base.ingredients["T"], scaled.ingredients["T"]);
        // integer horizons: the rescaled search lands within one unscaled step
        prop_assert!(ts <= sf * t1 && ts > sf * (t1 - 2.0) + 1.0, "T = {t1}, scaled T = {ts}, s = {s}");
    }

    #[test]
    fn basic2_monotone_in_phi(
        phi in prop::collection::vec(1.0f64..200.0, 3),
        bump in prop::collection::vec(0.0f64..100.0, 3),
        scale in 5.0f64..500.0,
    ) {
        let masses = [0.5, 0.35, 0.15];
        let tails = decaying(3, scale);
        let lo = bound_basic2(&phi, &tails, &masses, 0.25, &unit(), &OPTS).unwrap();
        let up: Vec<f64> = phi.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let hi = bound_basic2(&up, &tails, &masses, 0.25, &unit(), &OPTS).unwrap();
        prop_assert!(hi.value >= lo.value);
    }

    #[test]
    fn trace_keeps_restricted_stationary(n in 3usize..12, seed in 0u64..10_000, mask in 1u32..4095) {
        let k = random_reversible(n, seed).unwrap();
        let a: Vec<usize> = (0..n).filter(|x| mask & (1 << x) != 0).collect();
        prop_assume!(!a.is_empty());
        let pi = stationary_distribution(&k).unwrap();
        let t = trace_on(&k, &a).unwrap();
        let pit = stationary_distribution(&t).unwrap();
        let mass: f64 = a.iter().map(|&x| pi.weights[x]).sum();
        for (r, &x) in a.iter().enumerate() {
            prop_assert!((pit.weights[r] - pi.weights[x] / mass).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn comparisons_are_sound(
        p in 0.02f64..0.5,
        q in 0.02f64..0.5,
        t0 in 1.0f64..30.0,
        t1 in 1.0f64..30.0,
        b in 0.5f64..2.0,
        alpha in 1.1f64..3.0,
        lazy in 0.1f64..0.9,
    ) {
        let base = WellCoveringQuery::new(two_state(p, q), vec![t0, t1], b).unwrap();
        let cert = oracle_certificate(&base, 64, 1 << 40).unwrap();
        let faster = (1.0 / p.max(q)).min(1.5 * alpha);
        let transforms = [
            WcTransform::ScaleThresholds { alpha },
            WcTransform::ScaleB { alpha },
            WcTransform::Lazify { alpha: lazy },
            WcTransform::Monotone { target: two_state(p * faster.max(1.0), q * faster.max(1.0)) },
        ];
        for tr in &transforms {
            let c = compare_wc(&cert, tr).unwrap();
            let direct = oracle_certificate(&c.query, 64, 1 << 40).unwrap();
            prop_assert!(direct.value <= c.value, "{tr:?}: direct {} > comparison {}", direct.value, c.value);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn local_to_global_on_pince_nez(b in 0.5f64..4.0, epsilon in 0.05f64..0.5, seed in 0u64..1000) {
        let (k, part) = pince_nez(8).unwrap();
        let pi = stationary_distribution(&k).unwrap();
        let d = decompose(&k, &pi, &part, 1 << 20).unwrap();
        let phi: Vec<f64> = d.block_mixing_times.iter().map(|&v| v as f64).collect();
        let n = part.n_blocks();
        // least doubling T beyond the certified covering time at (B phi, B'(T))
        let mut horizon: u64 = 2;
        loop {
            let spread = local_to_global_b(d.phi_max as f64, n, horizon, epsilon);
            let q = WellCoveringQuery::new(d.projected.clone(), phi.iter().map(|p| b * p).collect(), spread).unwrap();
            let wc = oracle_certificate(&q, 64, 1 << 40).unwrap().value;
            if horizon as f64 > wc {
                break;
            }
            horizon = (2 * horizon).max(wc as u64 + 1);
        }
        let audit = local_to_global_audit(&k, &part, &phi, b, horizon, &[0, 8], 400, seed).unwrap();
        prop_assert!(audit.frequency <= epsilon + 3.0 * audit.standard_error + 1e-12);
    }
}
