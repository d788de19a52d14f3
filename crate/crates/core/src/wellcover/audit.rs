use rayon::prelude::*;
use serde::Serialize;

use crate::decomposition::{projected_kernel, Partition};
use crate::error::{Error, Result};
use crate::kernel::{StationaryDistribution, StochasticKernel};
use crate::sim::{mean_and_se, replica_rng, wilson_interval, KernelSampler, Sampler, Z99};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationRow {
    /// 1: next step after each visit to `Omega_i`; 2: previous step before each visit to `Omega_j`.
    pub orientation: u8,
    pub c: f64,
    pub t: u64,
    pub exceed: u64,
    pub empirical: f64,
    pub wilson_hi: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationAudit {
    pub i: usize,
    pub j: usize,
    pub start: usize,
    pub reps: u64,
    pub seed: u64,
    pub phi_max: f64,
    pub kbar_ij: f64,
    pub kbar_ji: f64,
    pub rows: Vec<ConcentrationRow>,
}

impl ConcentrationAudit {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("orientation,c,t,empirical,wilson_hi,bound\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{},{}\n", r.orientation, r.c, r.t, r.empirical, r.wilson_hi, r.bound));
        }
        s
    }

    /// Rows whose Wilson upper limit is above the bound.
    pub fn violations(&self) -> Vec<&ConcentrationRow> {
        self.rows.iter().filter(|r| r.wilson_hi > r.bound).collect()
    }
}

/// Transition counts at the first `t + 1` visits, for each `t` in the grid.
fn run_counts(
    sampler: &KernelSampler,
    partition: &Partition,
    i: usize,
    j: usize,
    start: usize,
    grid: &[u64],
    rng: &mut crate::sim::SimRng,
) -> (Vec<u64>, Vec<u64>) {
    let tmax = *grid.last().unwrap();
    let (mut out1, mut out2) = (Vec::with_capacity(grid.len()), Vec::with_capacity(grid.len()));
    let (mut vi, mut vj, mut c1, mut c2) = (0u64, 0u64, 0u64, 0u64);
    let mut prev_in_i = false;
    let mut x = start;
    while vi <= tmax || vj <= tmax {
        let bx = partition.block_of(x);
        if bx == j && vj <= tmax {
            if prev_in_i {
                c2 += 1;
            }
            if grid.get(out2.len()) == Some(&vj) {
                out2.push(c2);
            }
            vj += 1;
        }
        let y = sampler.step(x, rng);
        if bx == i && vi <= tmax {
            if partition.block_of(y) == j {
                c1 += 1;
            }
            if grid.get(out1.len()) == Some(&vi) {
                out1.push(c1);
            }
            vi += 1;
        }
        prev_in_i = bx == i;
        x = y;
    }
    (out1, out2)
}

/// Monte Carlo check of the spread inequality for the pair `(i, j)`.
///
/// Orientation 1 counts, over the first `t + 1` visits to `Omega_i`
/// (time 0 included), those followed by a step into `Omega_j`, and
/// compares the fraction with `Kbar(i,j)`. Orientation 2 counts, over the
/// first `t + 1` visits to `Omega_j`, those preceded by a step from
/// `Omega_i`, against `Kbar(j,i)`; the time-0 visit has no predecessor.
#[allow(clippy::too_many_arguments)]
pub fn concentration_audit(
    kernel: &StochasticKernel,
    pi: &StationaryDistribution,
    partition: &Partition,
    i: usize,
    j: usize,
    t_grid: &[u64],
    c_grid: &[f64],
    reps: u64,
    seed: u64,
    start: usize,
    phi_max: f64,
) -> Result<ConcentrationAudit> {
    if reps < 1000 {
        return Err(Error::InvalidParameter(format!("reps = {reps} is below 1000")));
    }
    let nb = partition.n_blocks();
    if i >= nb || j >= nb || start >= kernel.n_states() {
        return Err(Error::InvalidParameter("block or start state out of range".into()));
    }
    if t_grid.is_empty() || c_grid.iter().any(|c| !(*c > 0.0)) || !(phi_max > 0.0) {
        return Err(Error::InvalidParameter("empty t grid, nonpositive c or phi_max".into()));
    }
    if !kernel.is_irreducible() {
        return Err(Error::ReducibleKernel);
    }
    let kbar = projected_kernel(kernel, pi, partition)?;
    let (kij, kji) = (kbar.get(i, j), kbar.get(j, i));
    let mut grid = t_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let sampler = KernelSampler::new(kernel);
    let runs: Vec<(Vec<u64>, Vec<u64>)> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r);
            run_counts(&sampler, partition, i, j, start, &grid, &mut rng)
        })
        .collect();
    let mut rows = Vec::new();
    for (orientation, target) in [(1u8, kij), (2u8, kji)] {
        for &c in c_grid {
            for (g, &t) in grid.iter().enumerate() {
                let exceed = runs
                    .iter()
                    .filter(|run| {
                        let count = if orientation == 1 { run.0[g] } else { run.1[g] };
                        (count as f64 / (t + 1) as f64 - target).abs() > c
                    })
                    .count() as u64;
                let (_, hi) = wilson_interval(exceed, reps, Z99);
                rows.push(ConcentrationRow {
                    orientation,
                    c,
                    t,
                    exceed,
                    empirical: exceed as f64 / reps as f64,
                    wilson_hi: hi,
                    bound: 4.0 * (-c * c * (t + 1) as f64 / (8.0 * phi_max)).exp(),
                });
            }
        }
    }
    Ok(ConcentrationAudit { i, j, start, reps, seed, phi_max, kbar_ij: kij, kbar_ji: kji, rows })
}

/// `sqrt(8 phi_max ln(8 n^2 T / eps))`.
pub fn local_to_global_b(phi_max: f64, n: usize, horizon: u64, epsilon: f64) -> f64 {
    (8.0 * phi_max * (8.0 * (n * n) as f64 * horizon as f64 / epsilon).ln()).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalToGlobalAudit {
    pub horizon: u64,
    pub b: f64,
    pub reps: u64,
    /// Start with the largest frequency.
    pub worst_start: usize,
    /// Frequency of `kappa_i(T) < b phi_i` for every block.
    pub frequency: f64,
    pub standard_error: f64,
}

/// Frequency of the event `max_i kappa_i(T) / phi_i < b`, maximised over
/// the given starts, with `kappa_i(T) = #{1 <= u <= T : X_u in Omega_i}`.
#[allow(clippy::too_many_arguments)]
pub fn local_to_global_audit(
    kernel: &StochasticKernel,
    partition: &Partition,
    phi: &[f64],
    b: f64,
    horizon: u64,
    starts: &[usize],
    reps: u64,
    seed: u64,
) -> Result<LocalToGlobalAudit> {
    let nb = partition.n_blocks();
    if phi.len() != nb {
        return Err(Error::DimensionMismatch { expected: nb, got: phi.len() });
    }
    if starts.is_empty() || reps == 0 {
        return Err(Error::InvalidParameter("need at least one start and one replica".into()));
    }
    let sampler = KernelSampler::new(kernel);
    let mut best = (0usize, -1.0, 0.0);
    for (si, &start) in starts.iter().enumerate() {
        let hits: Vec<u64> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = replica_rng(seed, ((si as u64) << 40) | r);
                let mut kappa = vec![0u64; nb];
                let mut x = start;
                for _ in 0..horizon {
                    x = sampler.step(x, &mut rng);
                    kappa[partition.block_of(x)] += 1;
                }
                u64::from((0..nb).all(|i| (kappa[i] as f64) < b * phi[i]))
            })
            .collect();
        let (mean, se) = mean_and_se(&hits);
        if mean > best.1 {
            best = (start, mean, se);
        }
    }
    Ok(LocalToGlobalAudit { horizon, b, reps, worst_start: best.0, frequency: best.1, standard_error: best.2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn huge_c_never_exceeds() {
        let (k, p) = crate::zoo::pince_nez(4).unwrap();
        let pi = StationaryDistribution::uniform(8);
        let a = concentration_audit(&k, &pi, &p, 0, 1, &[10, 100], &[10.0], 1000, 3, 0, 4.0).unwrap();
        assert_eq!(a.rows.len(), 4);
        assert!(a.rows.iter().all(|r| r.exceed == 0 && r.empirical <= r.bound));
        assert!(a.to_csv().starts_with("orientation,c,t,empirical,wilson_hi,bound\n"));
    }

    #[test]
    fn two_state_counts_match_kbar() {
        // blocks are single states, so visit fractions concentrate on Kbar
        let k = StochasticKernel::from_rows(vec![vec![0.7, 0.3], vec![0.3, 0.7]]).unwrap();
        let pi = StationaryDistribution::uniform(2);
        let p = Partition::new(vec![0, 1]).unwrap();
        let a = concentration_audit(&k, &pi, &p, 0, 1, &[2000], &[0.05], 1000, 9, 0, 1.0).unwrap();
        assert!(a.rows.iter().all(|r| r.empirical < 0.01));
        assert!((a.kbar_ij - 0.3).abs() < 1e-12);
    }

    #[test]
    fn local_to_global_extremes() {
        let k = StochasticKernel::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let p = Partition::new(vec![0, 1]).unwrap();
        let a = local_to_global_audit(&k, &p, &[1.0, 1.0], 1e9, 50, &[0, 1], 200, 1).unwrap();
        assert_eq!(a.frequency, 1.0);
        let a = local_to_global_audit(&k, &p, &[1.0, 1.0], 1.0, 50, &[0], 200, 1).unwrap();
        assert_eq!(a.frequency, 0.0);
        assert!(local_to_global_b(1.0, 2, 100, 0.1) > 0.0);
    }
}
