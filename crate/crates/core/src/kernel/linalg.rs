use nalgebra::DMatrix;

use super::StochasticKernel;
use crate::error::{Error, Result};
use crate::tolerance::DIRECT_SOLVE_LIMIT;

pub(crate) fn lu_solve(a: DMatrix<f64>, b: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let lu = a.lu();
    lu.solve(&b)
}

pub(crate) fn solve_stationary(kernel: &StochasticKernel) -> Result<Vec<f64>> {
    let n = kernel.n_states();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for x in 0..n {
        for &(y, p) in kernel.support(x) {
            a[(y, x)] += p;
        }
        a[(x, x)] -= 1.0;
    }
    for x in 0..n {
        a[(n - 1, x)] = 1.0;
    }
    let mut b = DMatrix::<f64>::zeros(n, 1);
    b[(n - 1, 0)] = 1.0;
    let sol = lu_solve(a, b)
        .ok_or_else(|| Error::SingularSystem("stationary equations".into()))?;
    Ok(sol.column(0).iter().cloned().collect())
}

/// Solves `(I - K_TT) X = rhs` where `T = transient` and `rhs` has one row
/// per transient state. Dense LU up to the direct-solve limit, Gauss-Seidel
/// sweeps beyond it.
pub(crate) fn absorbing_solve(
    kernel: &StochasticKernel,
    transient: &[usize],
    rhs: DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let t = transient.len();
    if rhs.nrows() != t {
        return Err(Error::DimensionMismatch { expected: t, got: rhs.nrows() });
    }
    if t == 0 {
        return Ok(rhs);
    }
    let mut local = vec![usize::MAX; kernel.n_states()];
    for (k, &x) in transient.iter().enumerate() {
        local[x] = k;
    }
    if t <= DIRECT_SOLVE_LIMIT {
        let mut a = DMatrix::<f64>::identity(t, t);
        for (r, &x) in transient.iter().enumerate() {
            for &(y, p) in kernel.support(x) {
                let c = local[y];
                if c != usize::MAX {
                    a[(r, c)] -= p;
                }
            }
        }
        return lu_solve(a, rhs)
            .ok_or_else(|| Error::SingularSystem("I - K restricted to transient set".into()));
    }
    gauss_seidel(kernel, transient, &local, rhs)
}

fn gauss_seidel(
    kernel: &StochasticKernel,
    transient: &[usize],
    local: &[usize],
    rhs: DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let mut x = rhs.clone();
    for col in 0..rhs.ncols() {
        for _sweep in 0..1_000_000 {
            let mut delta: f64 = 0.0;
            let mut scale: f64 = 1.0;
            for (r, &s) in transient.iter().enumerate() {
                let mut acc = rhs[(r, col)];
                let mut diag = 0.0;
                for &(y, p) in kernel.support(s) {
                    let c = local[y];
                    if c == r {
                        diag += p;
                    } else if c != usize::MAX {
                        acc += p * x[(c, col)];
                    }
                }
                if diag >= 1.0 {
                    return Err(Error::SingularSystem(format!("state {s} is absorbing")));
                }
                let v = acc / (1.0 - diag);
                delta = delta.max((v - x[(r, col)]).abs());
                scale = scale.max(v.abs());
                x[(r, col)] = v;
            }
            if delta <= 1e-13 * scale {
                break;
            }
        }
    }
    Ok(x)
}
