//! Loading chains and evaluating every applicable bound on them.

use serde::Serialize;

use super::config::ChainSource;
use crate::bounds::{
    bound_basic, bound_basic2, bound_regular, calibrate, escape_regularity, peres_sousi_audit, BoundResult,
    Calibration, ExactTails, McTails, OccupationTails, PeresSousiConstants, SearchOptions, SubsetMode, TABLE_LIMIT,
};
use crate::decomposition::{
    avg_hit_time, decompose, parse_partition, AvgHitMode, DecompositionReport, Partition, EXACT_BLOCK_LIMIT,
};
use crate::error::{Error, Result};
use crate::kernel::{
    check_reversible, io::parse_kernel, mixing_profile, relaxation_time, stationary_distribution, MixingProfile,
    StationaryDistribution, StochasticKernel,
};
use crate::sim::KernelSampler;
use crate::wellcover::{bootstrap_mixing_bound, oracle_certificate, propagation_bound, ORACLE_BLOCK_LIMIT};
use crate::zoo::{self, ChainSpec};

/// Profiles and block mixing times stop here.
pub const ANALYSIS_HORIZON: u64 = 1 << 22;

#[derive(Debug, Clone)]
pub struct Chain {
    pub label: String,
    pub kernel: StochasticKernel,
    pub partition: Partition,
    pub pi: StationaryDistribution,
}

impl Chain {
    pub fn from_spec(spec: &ChainSpec, label: &str) -> Result<Self> {
        let built = zoo::build(spec)?;
        let pi = match built.pi {
            Some(p) => p,
            None => stationary_distribution(&built.kernel)?,
        };
        Ok(Self { label: label.into(), kernel: built.kernel, partition: built.partition, pi })
    }

    pub fn parse_spec(s: &str) -> Result<Self> {
        Self::from_spec(&ChainSpec::parse(s)?, s)
    }

    pub fn load(source: &ChainSource) -> Result<Self> {
        match source {
            ChainSource::Spec(spec) => {
                let label = serde_json::to_string(spec).unwrap_or_default();
                Self::from_spec(spec, &label)
            }
            ChainSource::Files { kernel, partition } => {
                let kernel_text = std::fs::read_to_string(kernel)?;
                let k = parse_kernel(&kernel_text)?;
                let p = match partition {
                    Some(path) => parse_partition(&std::fs::read_to_string(path)?)?,
                    None => Partition::single_block(k.n_states()),
                };
                p.check(&k)?;
                let pi = stationary_distribution(&k)?;
                Ok(Self { label: kernel.display().to_string(), kernel: k, partition: p, pi })
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub tau_mix: u64,
    pub relaxation_time: Option<f64>,
    pub profile: MixingProfile,
    pub decomposition: DecompositionReport,
    pub chain_residual: f64,
    pub projected_residual: f64,
}

impl Analysis {
    pub fn phi(&self) -> Vec<f64> {
        self.decomposition.block_mixing_times.iter().map(|&x| x as f64).collect()
    }
}

/// Exact mixing time, block decomposition and reversibility residuals.
/// A projected chain off detailed balance by more than 1e-9 is an
/// internal assertion failure.
pub fn analyze(chain: &Chain) -> Result<Analysis> {
    let profile = mixing_profile(&chain.kernel, &chain.pi, ANALYSIS_HORIZON)?;
    let tau_mix = profile.mixing_time.ok_or(Error::NoFeasibleT(ANALYSIS_HORIZON))?;
    let decomposition = decompose(&chain.kernel, &chain.pi, &chain.partition, ANALYSIS_HORIZON)?;
    let chain_residual = check_reversible(&chain.kernel, &chain.pi)?.max_residual;
    let bar = StationaryDistribution::new(decomposition.block_masses.clone())?;
    let projected_residual = check_reversible(&decomposition.projected, &bar)?.max_residual;
    if projected_residual > 1e-9 {
        return Err(Error::AssertionFailed(format!(
            "projected kernel detailed balance: residual {projected_residual:.3e} > 1e-9"
        )));
    }
    let relaxation_time = relaxation_time(&chain.kernel, &chain.pi).ok();
    Ok(Analysis { tau_mix, relaxation_time, profile, decomposition, chain_residual, projected_residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundSettings {
    pub alpha: f64,
    pub beta: f64,
    /// Envelope constant of the `regular` bound.
    pub envelope: f64,
    pub mc_reps: u64,
    pub mc_horizon: u64,
    pub seed: u64,
}

impl Default for BoundSettings {
    fn default() -> Self {
        Self { alpha: 0.25, beta: 0.8, envelope: 1.0, mc_reps: 1000, mc_horizon: 4096, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Skipped {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundSet {
    pub results: Vec<BoundResult>,
    pub skipped: Vec<Skipped>,
    pub blocks_i: Vec<usize>,
}

impl BoundSet {
    pub fn get(&self, name: &str) -> Option<&BoundResult> {
        self.results.iter().find(|r| r.name == name)
    }
}

/// Smallest prefix of blocks, by decreasing mass, whose mass exceeds `beta`.
pub fn heavy_blocks(masses: &[f64], beta: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..masses.len()).collect();
    order.sort_by(|&a, &b| masses[b].total_cmp(&masses[a]).then(a.cmp(&b)));
    let mut acc = 0.0;
    let mut out = Vec::new();
    for i in order {
        out.push(i);
        acc += masses[i];
        if acc > beta {
            break;
        }
    }
    out.sort_unstable();
    out
}

/// `(max_horizon, t_max)` for exact tails: `t` needs to reach about
/// `16 phi_max / c'` and the table budget fixes the horizon.
pub fn exact_tail_dims(phi_max: f64, c_alpha_prime: f64) -> (u64, u64) {
    let want = (16.0 * phi_max / c_alpha_prime).ceil().max(1.0) as u64;
    let t_max = want.next_power_of_two().clamp(64, 2048);
    ((TABLE_LIMIT as u64) / (t_max + 1) - 1, t_max)
}

/// Runs `f` on exact tails, falling back to Monte Carlo tails when the
/// exact tables do not fit.
fn with_tails<F>(chain: &Chain, phi_max: f64, cp: f64, s: &BoundSettings, f: F) -> Result<BoundResult>
where
    F: Fn(&dyn OccupationTails, &SearchOptions) -> Result<BoundResult>,
{
    let (h, t) = exact_tail_dims(phi_max, cp);
    let too_large = |e: &Error| matches!(e, Error::TooLarge { .. } | Error::ProductSpaceTooLarge { .. });
    match ExactTails::new(&chain.kernel, &chain.partition, h, t) {
        Ok(ex) => match f(&ex, &SearchOptions::default()) {
            Err(e) if too_large(&e) => {}
            r => return r,
        },
        Err(e) if too_large(&e) => {}
        Err(e) => return Err(e),
    }
    let mc = McTails::new(
        &KernelSampler::new(&chain.kernel),
        &chain.partition,
        &mc_starts(&chain.partition),
        s.mc_horizon,
        s.mc_reps,
        s.seed,
    )?;
    f(&mc, &SearchOptions { max_horizon: s.mc_horizon, grid_points: 64 })
}

/// First state of up to 16 evenly spread blocks.
pub fn mc_starts(partition: &Partition) -> Vec<usize> {
    let nb = partition.n_blocks();
    let k = nb.min(16);
    let mut starts: Vec<usize> = (0..k).map(|j| partition.members(j * nb / k)[0]).collect();
    starts.dedup();
    starts
}

/// `regular` with `eps` from a dyadic grid, `delta` the exact escape
/// probability at that `eps`, keeping the pair with the largest product.
pub fn regular_from_chain(
    chain: &Chain,
    analysis: &Analysis,
    alpha: f64,
    envelope: f64,
    constants: &PeresSousiConstants,
    seed: u64,
) -> Result<BoundResult> {
    let phi_max = analysis.decomposition.phi_max as f64;
    let mut best: Option<(f64, f64)> = None;
    for k in 0..=8 {
        let eps = 0.5f64.powi(k);
        let (delta, _) = escape_regularity(&chain.kernel, &chain.partition, eps, phi_max)?;
        if delta > 0.0 && best.is_none_or(|(e, d)| eps * delta > e * d) {
            best = Some((eps, delta));
        }
    }
    let (eps, delta) = best.ok_or_else(|| Error::InvalidParameter("no epsilon with positive escape delta".into()))?;
    let mode = if chain.partition.n_blocks() <= EXACT_BLOCK_LIMIT {
        AvgHitMode::Exact
    } else {
        AvgHitMode::Sampled { samples: 2000, seed }
    };
    let hit = avg_hit_time(&chain.kernel, &chain.pi, &chain.partition, alpha, mode)?;
    let mut r = bound_regular(eps, delta, hit.value, chain.partition.n_blocks(), envelope, true, constants)?;
    if hit.lower_bound_only {
        r.notes.push("phi_bar_hit from sampled block sets (lower estimate)".into());
    }
    Ok(r)
}

/// Every bound that needs no extra user input: basic, basic2, regular and
/// the bootstrap bound (oracle for at most three blocks, propagation
/// otherwise). Failures are recorded as skipped, not raised.
pub fn evaluate_bounds(
    chain: &Chain,
    analysis: &Analysis,
    constants: &PeresSousiConstants,
    s: &BoundSettings,
) -> Result<BoundSet> {
    let phi = analysis.phi();
    let phi_max = analysis.decomposition.phi_max as f64;
    let masses = &analysis.decomposition.block_masses;
    let cp = constants.c_alpha_prime;
    let blocks_i = heavy_blocks(masses, s.beta);
    let mut out = BoundSet { results: Vec::new(), skipped: Vec::new(), blocks_i: blocks_i.clone() };
    let mut record = |name: &str, r: Result<BoundResult>| match r {
        Ok(b) => out.results.push(b),
        Err(e) => out.skipped.push(Skipped { name: name.into(), reason: e.to_string() }),
    };
    record(
        "basic",
        with_tails(chain, phi_max, cp, s, |t, o| bound_basic(&phi, t, masses, s.alpha, s.beta, &blocks_i, constants, o)),
    );
    record("basic2", with_tails(chain, phi_max, cp, s, |t, o| bound_basic2(&phi, t, masses, s.alpha, constants, o)));
    record("regular", regular_from_chain(chain, analysis, s.alpha, s.envelope, constants, s.seed));
    let n = chain.partition.n_blocks();
    let provider = move |q: &crate::wellcover::WellCoveringQuery| {
        if n <= ORACLE_BLOCK_LIMIT {
            oracle_certificate(q, 64, 1 << 40)
        } else {
            propagation_bound(q, 1 << 40)
        }
    };
    record(
        "bootstrap",
        bootstrap_mixing_bound(
            &chain.kernel,
            &chain.pi,
            &chain.partition,
            &blocks_i,
            s.alpha,
            s.beta,
            &phi,
            &provider,
            constants,
        ),
    );
    Ok(out)
}

/// Reference chain for calibration.
pub const REFERENCE_CHAIN: &str = "pince_nez:m=8";

/// Fits constants on the reference chain: `c'` is the observed ratio of
/// mixing time to worst large-set hitting time, then `c_alpha` and the
/// `regular` envelope are the smallest values lifting each bound (at that
/// `c'`) to the exact mixing time.
pub fn calibrate_on_reference(seed: u64) -> Result<Calibration> {
    let chain = Chain::parse_spec(REFERENCE_CHAIN)?;
    let analysis = analyze(&chain)?;
    let mode = if chain.kernel.n_states() <= crate::bounds::EXACT_AUDIT_LIMIT {
        SubsetMode::Exact
    } else {
        SubsetMode::Sampled { samples: 4000, seed }
    };
    let audit = peres_sousi_audit(&chain.kernel, &chain.pi, 0.25, mode, ANALYSIS_HORIZON)?;
    let unit = PeresSousiConstants::new(1.0, audit.ratio, false)?;
    let set = evaluate_bounds(&chain, &analysis, &unit, &BoundSettings { seed, ..BoundSettings::default() })?;
    if let Some(s) = set.skipped.first() {
        return Err(Error::AssertionFailed(format!("calibration bound {} unavailable: {}", s.name, s.reason)));
    }
    calibrate(REFERENCE_CHAIN, analysis.tau_mix as f64, &set.results, audit.ratio)
}
