use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{linalg, StochasticKernel};
use crate::error::{Error, Result};
use crate::tolerance::Tolerances;

/// Hitting times of a target set `A`, with `tau_A = min{t >= 0 : X_t in A}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingTimeTable {
    pub target: Vec<usize>,
    pub expected: Vec<f64>,
    /// `tail[t][x] = P_x[tau_A > t]` for `t = 0..=horizon`; empty for horizon 0.
    pub tail: Vec<Vec<f64>>,
    /// `max_x P_x[tau_A > t]`.
    pub max_tail: Vec<f64>,
    pub harmonic_residual: f64,
    /// Largest `max_tail[kt] - max_tail[t]^k` seen (nonpositive up to rounding).
    pub submultiplicative_excess: f64,
}

impl HittingTimeTable {
    pub fn max_expected(&self) -> f64 {
        self.expected.iter().cloned().fold(0.0, f64::max)
    }
}

pub fn hitting_analysis(
    kernel: &StochasticKernel,
    target: &[usize],
    horizon: u64,
) -> Result<HittingTimeTable> {
    let n = kernel.n_states();
    if target.is_empty() {
        return Err(Error::UnreachableTarget(0));
    }
    let mut in_target = vec![false; n];
    for &a in target {
        if a >= n {
            return Err(Error::InvalidParameter(format!("target state {a} out of range")));
        }
        in_target[a] = true;
    }
    let reach = kernel.can_reach(target);
    if let Some(x) = reach.iter().position(|&r| !r) {
        return Err(Error::UnreachableTarget(x));
    }
    let outside: Vec<usize> = (0..n).filter(|&x| !in_target[x]).collect();
    let sol = linalg::absorbing_solve(
        kernel,
        &outside,
        DMatrix::from_element(outside.len(), 1, 1.0),
    )?;
    let mut expected = vec![0.0; n];
    for (r, &x) in outside.iter().enumerate() {
        expected[x] = sol[(r, 0)];
    }
    let mut residual: f64 = 0.0;
    let scale = expected.iter().cloned().fold(1.0, f64::max);
    for &x in &outside {
        let h: f64 = 1.0 + kernel.support(x).iter().map(|&(y, p)| p * expected[y]).sum::<f64>();
        residual = residual.max((h - expected[x]).abs());
    }
    if residual > Tolerances::DEFAULT.linear_solve * scale {
        return Err(Error::SingularSystem(format!("hitting residual {residual:.3e}")));
    }

    let mut tail = Vec::new();
    let mut max_tail = Vec::new();
    if horizon > 0 {
        let mut cur: Vec<f64> = (0..n).map(|x| if in_target[x] { 0.0 } else { 1.0 }).collect();
        max_tail.push(cur.iter().cloned().fold(0.0, f64::max));
        tail.push(cur.clone());
        for _ in 0..horizon {
            let next: Vec<f64> = (0..n)
                .map(|x| {
                    if in_target[x] {
                        0.0
                    } else {
                        kernel.support(x).iter().map(|&(y, p)| p * cur[y]).sum()
                    }
                })
                .collect();
            max_tail.push(next.iter().cloned().fold(0.0, f64::max));
            tail.push(next.clone());
            cur = next;
        }
    }
    let excess = submultiplicative_excess(&max_tail);
    if excess > 1e-12 {
        return Err(Error::AssertionFailed(format!(
            "hitting tails not submultiplicative (excess {excess:.3e})"
        )));
    }
    Ok(HittingTimeTable {
        target: target.to_vec(),
        expected,
        tail,
        max_tail,
        harmonic_residual: residual,
        submultiplicative_excess: excess,
    })
}

pub(crate) fn submultiplicative_excess(max_tail: &[f64]) -> f64 {
    let h = max_tail.len().saturating_sub(1);
    let mut worst = f64::NEG_INFINITY;
    for t in 1..=h {
        let mut k = 2;
        while k * t <= h {
            worst = worst.max(max_tail[k * t] - max_tail[t].powi(k as i32));
            k += 1;
        }
    }
    if worst == f64::NEG_INFINITY {
        0.0
    } else {
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn three_state() -> StochasticKernel {
        StochasticKernel::from_rows(vec![
            vec![0.5, 0.5, 0.0],
            vec![0.25, 0.5, 0.25],
            vec![0.0, 0.5, 0.5],
        ])
        .unwrap()
    }

    #[test]
    fn hand_solved_hitting_times() {
        // h1 = 1 + h1/2 + h2/4, h2 = 1 + h1/2 + h2/2 gives h1 = 6, h2 = 8
        let h = hitting_analysis(&three_state(), &[0], 40).unwrap();
        assert_eq!(h.expected[0], 0.0);
        assert_abs_diff_eq!(h.expected[1], 6.0, epsilon = 1e-10);
        assert_abs_diff_eq!(h.expected[2], 8.0, epsilon = 1e-10);
        assert!(h.harmonic_residual < 1e-10);
        assert!(h.submultiplicative_excess <= 1e-12);
        assert_eq!(h.tail.len(), 41);
        assert_eq!(h.tail[5][0], 0.0);
    }

    #[test]
    fn geometric_tail() {
        let k = StochasticKernel::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let h = hitting_analysis(&k, &[1], 10).unwrap();
        assert_abs_diff_eq!(h.expected[0], 2.0, epsilon = 1e-12);
        for t in 0..=10 {
            assert_abs_diff_eq!(h.tail[t][0], 0.5f64.powi(t as i32), epsilon = 1e-15);
        }
    }

    #[test]
    fn unreachable_target() {
        let k = StochasticKernel::from_rows(vec![vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        assert_eq!(hitting_analysis(&k, &[1], 0), Err(Error::UnreachableTarget(0)));
        assert!(hitting_analysis(&k, &[], 0).is_err());
    }
}
