use serde::{Deserialize, Serialize};

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.575_829_303_548_901;

/// An empirical probability with its Wilson 99% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub point: f64,
    pub wilson_low: f64,
    pub wilson_hi: f64,
    pub reps: u64,
}

impl TailEstimate {
    pub fn from_counts(successes: u64, reps: u64) -> Self {
        if reps == 0 {
            return Self { point: 0.0, wilson_low: 0.0, wilson_hi: 1.0, reps };
        }
        let (lo, hi) = wilson_interval(successes, reps, Z99);
        let point = successes as f64 / reps as f64;
        Self { point, wilson_low: lo.min(point), wilson_hi: hi.max(point), reps }
    }

    pub fn contains(&self, p: f64) -> bool {
        self.wilson_low <= p && p <= self.wilson_hi
    }
}

pub fn wilson_interval(successes: u64, reps: u64, z: f64) -> (f64, f64) {
    let n = reps as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Mean and standard error of integer samples; sums are exact so the
/// result does not depend on reduction order.
pub fn mean_and_se(samples: &[u64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let s: u128 = samples.iter().map(|&v| v as u128).sum();
    let s2: u128 = samples.iter().map(|&v| (v as u128) * (v as u128)).sum();
    let nf = n as f64;
    let mean = s as f64 / nf;
    if n < 2 {
        return (mean, f64::INFINITY);
    }
    // n * s2 - s^2 is exact in integers
    let num = (n as u128) * s2 - s * s;
    let var = num as f64 / (nf * (nf - 1.0));
    (mean, (var / nf).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_brackets_point() {
        for (s, n) in [(0, 100), (3, 100), (50, 100), (100, 100), (1, 10_000)] {
            let e = TailEstimate::from_counts(s, n);
            assert!(0.0 <= e.wilson_low && e.wilson_low <= e.point);
            assert!(e.point <= e.wilson_hi && e.wilson_hi <= 1.0);
        }
        let wide = TailEstimate::from_counts(10, 100);
        let narrow = TailEstimate::from_counts(1000, 10_000);
        assert!(narrow.wilson_hi - narrow.wilson_low < wide.wilson_hi - wide.wilson_low);
    }

    #[test]
    fn mean_se_exact() {
        let (m, se) = mean_and_se(&[1, 2, 3, 4]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }
}
