use crate::decomposition::{trace_on, Partition};
use crate::error::{Error, Result};
use crate::kernel::{StationaryDistribution, StochasticKernel};

pub const TORUS_EXPLICIT_LIMIT: usize = 1_000_000;

/// Metropolis chain on `Z_{2l}^m` targeting `pi(x) ∝ prod_i w(x_i)` with
/// `w(u) = m^{-C min(u, 2l-1-u)}`, optionally traced onto `Omega^(k)`.
#[derive(Debug, Clone)]
pub struct TorusChain {
    pub m: usize,
    pub l: usize,
    pub c: f64,
    pub k_trace: Option<usize>,
    pub kernel: StochasticKernel,
    /// Blocks indexed by the bit mask `z` of "high" coordinates.
    pub partition: Partition,
    /// Coordinates of each kernel state.
    pub states: Vec<Vec<u8>>,
    pub pi: StationaryDistribution,
}

pub fn height(u: usize, l: usize) -> usize {
    u.min(2 * l - 1 - u)
}

/// One-dimensional weight `w(u)`.
pub fn coordinate_weight(u: usize, m: usize, l: usize, c: f64) -> f64 {
    (-(c * height(u, l) as f64) * (m as f64).ln()).exp()
}

/// Whether coordinate value `u` is allowed in `Omega^(k)` and, if so, its side.
fn side(u: usize, l: usize, k: usize) -> Option<bool> {
    if u + k < l {
        Some(false)
    } else if u >= l + k {
        Some(true)
    } else {
        None
    }
}

/// `pi(Omega^(k))` from the product form.
pub fn omega_k_mass(m: usize, l: usize, c: f64, k: usize) -> f64 {
    let w: Vec<f64> = (0..2 * l).map(|u| coordinate_weight(u, m, l, c)).collect();
    let z: f64 = w.iter().sum();
    let inside: f64 = (0..2 * l).filter(|&u| side(u, l, k).is_some()).map(|u| w[u]).sum();
    (inside / z).powi(m as i32)
}

pub fn torus_metropolis(m: usize, l: usize, c: f64, k_trace: Option<usize>) -> Result<TorusChain> {
    if m == 0 || l < 2 || c <= 1.0 {
        return Err(Error::InvalidParameter("torus chain needs m >= 1, l >= 2, C > 1".into()));
    }
    let side_len = 2 * l;
    let n = side_len
        .checked_pow(m as u32)
        .filter(|&n| n <= TORUS_EXPLICIT_LIMIT)
        .ok_or(Error::TooLarge { got: usize::MAX, limit: TORUS_EXPLICIT_LIMIT })?;
    let w: Vec<f64> = (0..side_len).map(|u| coordinate_weight(u, m, l, c)).collect();
    let coords = |x: usize| -> Vec<u8> {
        let mut v = Vec::with_capacity(m);
        let mut r = x;
        for _ in 0..m {
            v.push((r % side_len) as u8);
            r /= side_len;
        }
        v
    };
    let prop = 1.0 / (3.0 * m as f64);
    let mut entries = Vec::with_capacity(n * 2 * m);
    let mut stride = 1;
    let mut strides = Vec::with_capacity(m);
    for _ in 0..m {
        strides.push(stride);
        stride *= side_len;
    }
    for x in 0..n {
        let cx = coords(x);
        for i in 0..m {
            let u = cx[i] as usize;
            for v in [(u + 1) % side_len, (u + side_len - 1) % side_len] {
                let acc = (w[v] / w[u]).min(1.0);
                let y = x - u * strides[i] + v * strides[i];
                entries.push((x, y, prop * acc));
            }
        }
    }
    let full = StochasticKernel::from_off_diagonal(n, &entries)?;
    let weight = |cx: &[u8]| cx.iter().map(|&u| w[u as usize]).product::<f64>();
    let k = k_trace.unwrap_or(0);
    let keep: Vec<usize> = (0..n)
        .filter(|&x| coords(x).iter().all(|&u| side(u as usize, l, k).is_some()))
        .collect();
    let kernel = if keep.len() == n { full } else { trace_on(&full, &keep)? };
    let states: Vec<Vec<u8>> = keep.iter().map(|&x| coords(x)).collect();
    let mut pw: Vec<f64> = states.iter().map(|s| weight(s)).collect();
    let z: f64 = pw.iter().sum();
    pw.iter_mut().for_each(|v| *v /= z);
    let block_of = states
        .iter()
        .map(|s| {
            s.iter().enumerate().fold(0usize, |acc, (i, &u)| {
                acc | ((side(u as usize, l, k) == Some(true)) as usize) << i
            })
        })
        .collect();
    Ok(TorusChain {
        m,
        l,
        c,
        k_trace,
        kernel,
        partition: Partition::new(block_of)?,
        states,
        pi: StationaryDistribution { weights: pw },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{check_reversible, stationary_distribution};
    use approx::assert_abs_diff_eq;

    #[test]
    fn product_form_matches_solve() {
        let t = torus_metropolis(3, 3, 7.0, None).unwrap();
        assert_eq!(t.kernel.n_states(), 216);
        let pi = stationary_distribution(&t.kernel).unwrap();
        for (a, b) in pi.weights.iter().zip(&t.pi.weights) {
            assert!((a - b).abs() <= 1e-9 * b.max(1e-300) + 1e-15);
        }
        assert!(check_reversible(&t.kernel, &t.pi).unwrap().reversible);
        assert_eq!(t.partition.n_blocks(), 8);
    }

    #[test]
    fn uphill_acceptance() {
        let m = 3;
        let t = torus_metropolis(m, 3, 2.0, None).unwrap();
        // from the origin, moving coordinate 0 to 1 raises H by one
        let p = t.kernel.get(0, 1);
        assert_abs_diff_eq!(p, (1.0 / 9.0) * (m as f64).powf(-2.0), epsilon = 1e-15);
        // moving 0 -> 2l-1 keeps H = 0
        assert_abs_diff_eq!(t.kernel.get(0, 5), 1.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn traced_blocks() {
        let t = torus_metropolis(3, 3, 7.0, Some(1)).unwrap();
        assert_eq!(t.kernel.n_states(), 64);
        assert_eq!(t.partition.n_blocks(), 8);
        assert!(omega_k_mass(4, 3, 7.0, 1) >= 0.9);
    }
}
