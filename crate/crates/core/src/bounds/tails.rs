use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::Partition;
use crate::error::{Error, Result};
use crate::kernel::StochasticKernel;
use crate::sim::{replica_rng, Sampler, TailEstimate, PRODUCT_SPACE_LIMIT};

/// Cap on stored `(T, t)` cells per block set in [`ExactTails`].
pub const TABLE_LIMIT: usize = 25_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailProvenance {
    Exact,
    /// Wilson 99% upper bounds; the max over starts covers `starts` only and,
    /// when `exhaustive` is false, the max over block sets is a local search.
    Mc { reps: u64, seed: u64, starts: Vec<usize>, exhaustive: bool },
    Supplied,
}

/// Upper bounds on `max_z P_z[kappa_i(T) < t for all i in I]`.
///
/// Values outside the provider's range must stay valid upper bounds
/// (returning 1 is always allowed).
pub trait OccupationTails: Sync {
    fn n_blocks(&self) -> usize;
    fn joint_tail(&self, blocks: &[usize], horizon: u64, t: u64) -> Result<f64>;
    fn provenance(&self) -> TailProvenance;

    fn block_tail(&self, block: usize, horizon: u64, t: u64) -> Result<f64> {
        self.joint_tail(&[block], horizon, t)
    }

    /// Largest joint tail over `sets`, with the maximizing set.
    fn worst_joint_tail(&self, sets: &QualifyingSets, horizon: u64, t: u64) -> Result<(f64, Vec<usize>)> {
        let list = sets.minimal.as_ref().ok_or_else(|| {
            Error::TooManyBlocks { got: sets.masses.len(), limit: crate::decomposition::EXACT_BLOCK_LIMIT }
        })?;
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for s in list {
            let v = self.joint_tail(s, horizon, t)?;
            if v > best.0 {
                best = (v, s.clone());
            }
        }
        Ok(best)
    }
}

/// Block sets `I` with `pi(union I) >= need`, represented by the minimal
/// ones: every joint tail over a superset is smaller.
#[derive(Debug, Clone, PartialEq)]
pub struct QualifyingSets {
    pub masses: Vec<f64>,
    pub need: f64,
    /// All minimal qualifying sets when the block count allows enumeration.
    pub minimal: Option<Vec<Vec<usize>>>,
    /// Largest size of any minimal qualifying set.
    pub max_size: usize,
}

impl QualifyingSets {
    pub fn new(masses: &[f64], need: f64) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if total < need - 1e-12 {
            return Err(Error::NoQualifyingSet(need));
        }
        let nb = masses.len();
        let mut sorted = masses.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut acc = 0.0;
        let mut below = 0;
        for m in &sorted {
            if acc + m < need - 1e-12 {
                acc += m;
                below += 1;
            } else {
                break;
            }
        }
        let max_size = (below + 1).min(nb);
        let minimal = (nb <= crate::decomposition::EXACT_BLOCK_LIMIT).then(|| {
            let mut out = Vec::new();
            for mask in 1u32..(1u32 << nb) {
                let members: Vec<usize> = (0..nb).filter(|&i| mask & (1 << i) != 0).collect();
                let mass: f64 = members.iter().map(|&i| masses[i]).sum();
                if mass < need - 1e-12 {
                    continue;
                }
                if members.iter().all(|&i| mass - masses[i] < need - 1e-12) {
                    out.push(members);
                }
            }
            out
        });
        Ok(Self { masses: masses.to_vec(), need, minimal, max_size })
    }

    pub fn qualifies(&self, blocks: &[usize]) -> bool {
        blocks.iter().map(|&i| self.masses[i]).sum::<f64>() >= self.need - 1e-12
    }

    /// `max_I sum_{i in I} w_i` over minimal sets; an upper bound (the
    /// `max_size` largest weights) when they were not enumerated.
    pub fn max_weight(&self, w: &[f64]) -> f64 {
        match &self.minimal {
            Some(list) => list
                .iter()
                .map(|s| s.iter().map(|&i| w[i]).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max),
            None => {
                let mut v = w.to_vec();
                v.sort_by(|a, b| b.total_cmp(a));
                v.iter().take(self.max_size).sum()
            }
        }
    }
}

/// A tail supplied as a closure `(blocks, T, t) -> bound`.
pub struct FnTails<F> {
    pub n_blocks: usize,
    pub f: F,
}

impl<F: Fn(&[usize], u64, u64) -> f64 + Sync> OccupationTails for FnTails<F> {
    fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    fn joint_tail(&self, blocks: &[usize], horizon: u64, t: u64) -> Result<f64> {
        Ok((self.f)(blocks, horizon, t).clamp(0.0, 1.0))
    }

    fn provenance(&self) -> TailProvenance {
        TailProvenance::Supplied
    }
}

/// Growing table `rows[T][t] = max_x P_x[...]` for one block set, with the
/// DP state kept so later requests extend it.
struct Table {
    rows: Vec<Vec<f64>>,
    state: Vec<f64>,
}

/// Exact tails by backward dynamic programming over (state, remaining
/// budget per block). One pass yields every `T <= max_horizon` and every
/// `t <= t_max`; larger `T` reuse the value at `max_horizon` (tails are
/// nonincreasing in `T`) and larger `t` return 1.
pub struct ExactTails<'a> {
    kernel: &'a StochasticKernel,
    partition: &'a Partition,
    max_horizon: u64,
    t_max: u64,
    cache: Mutex<HashMap<Vec<usize>, Arc<Mutex<Table>>>>,
}

impl<'a> ExactTails<'a> {
    pub fn new(
        kernel: &'a StochasticKernel,
        partition: &'a Partition,
        max_horizon: u64,
        t_max: u64,
    ) -> Result<Self> {
        partition.check(kernel)?;
        if t_max == 0 || max_horizon == 0 {
            return Err(Error::InvalidParameter("t_max and max_horizon must be positive".into()));
        }
        let cells = (max_horizon as usize + 1).saturating_mul(t_max as usize + 1);
        if cells > TABLE_LIMIT {
            return Err(Error::TooLarge { got: cells, limit: TABLE_LIMIT });
        }
        Ok(Self { kernel, partition, max_horizon, t_max, cache: Mutex::new(HashMap::new()) })
    }

    pub fn max_horizon(&self) -> u64 {
        self.max_horizon
    }

    pub fn t_max(&self) -> u64 {
        self.t_max
    }

    fn table(&self, blocks: &[usize]) -> Result<Arc<Mutex<Table>>> {
        let mut key = blocks.to_vec();
        key.sort_unstable();
        key.dedup();
        let mut cache = self.cache.lock().expect("tail cache poisoned");
        if let Some(t) = cache.get(&key) {
            return Ok(t.clone());
        }
        let n = self.kernel.n_states();
        let base = self.t_max as usize;
        let codes = (0..key.len())
            .try_fold(1usize, |acc, _| acc.checked_mul(base))
            .filter(|c| c.saturating_mul(n) <= PRODUCT_SPACE_LIMIT)
            .ok_or(Error::ProductSpaceTooLarge {
                got: base.saturating_pow(key.len() as u32).saturating_mul(n),
                limit: PRODUCT_SPACE_LIMIT,
            })?;
        let state = vec![1.0; n * codes];
        let mut tab = Table { rows: Vec::new(), state };
        tab.rows.push(self.row(&tab.state, key.len(), codes));
        let t = Arc::new(Mutex::new(tab));
        cache.insert(key, t.clone());
        Ok(t)
    }

    /// `row[t] = max_x V(x, all budgets = t)`, `t = 0..=t_max`.
    fn row(&self, state: &[f64], k: usize, codes: usize) -> Vec<f64> {
        let n = self.kernel.n_states();
        let base = self.t_max as usize;
        let unit: usize = (0..k).map(|p| base.pow(p as u32)).sum();
        let mut row = vec![0.0; base + 1];
        for t in 1..=base {
            let code = (t - 1) * unit;
            row[t] = (0..n).map(|x| state[x * codes + code]).fold(0.0, f64::max);
        }
        row
    }

    fn extend(&self, key: &[usize], tab: &mut Table, upto: u64) {
        let n = self.kernel.n_states();
        let base = self.t_max as usize;
        let k = key.len();
        let codes = tab.state.len() / n;
        let pos: Vec<Option<usize>> = (0..n)
            .map(|x| key.iter().position(|&b| b == self.partition.block_of(x)))
            .collect();
        let stride: Vec<usize> = (0..k).map(|p| base.pow(p as u32)).collect();
        let mut next = vec![0.0; tab.state.len()];
        while (tab.rows.len() as u64) <= upto {
            let cur = &tab.state;
            next.par_chunks_mut(codes).enumerate().for_each(|(x, out)| {
                for (code, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for &(y, p) in self.kernel.support(x) {
                        match pos[y] {
                            None => acc += p * cur[y * codes + code],
                            Some(q) => {
                                if (code / stride[q]) % base > 0 {
                                    acc += p * cur[y * codes + code - stride[q]];
                                }
                            }
                        }
                    }
                    *o = acc;
                }
            });
            std::mem::swap(&mut tab.state, &mut next);
            let r = self.row(&tab.state, k, codes);
            tab.rows.push(r);
        }
    }
}

impl OccupationTails for ExactTails<'_> {
    fn n_blocks(&self) -> usize {
        self.partition.n_blocks()
    }

    fn joint_tail(&self, blocks: &[usize], horizon: u64, t: u64) -> Result<f64> {
        if t == 0 {
            return Ok(0.0);
        }
        if blocks.is_empty() || t > horizon || t > self.t_max {
            return Ok(1.0);
        }
        if blocks.iter().any(|&b| b >= self.n_blocks()) {
            return Err(Error::InvalidParameter("block index out of range".into()));
        }
        let h = horizon.min(self.max_horizon);
        let table = self.table(blocks)?;
        let mut tab = table.lock().expect("tail table poisoned");
        if tab.rows.len() as u64 <= h {
            let mut key = blocks.to_vec();
            key.sort_unstable();
            key.dedup();
            self.extend(&key, &mut tab, h);
        }
        Ok(tab.rows[h as usize][t as usize].min(1.0))
    }

    fn provenance(&self) -> TailProvenance {
        TailProvenance::Exact
    }
}

/// Monte Carlo tails from stored block trajectories.
///
/// Each start `z` gets `reps` replicas of length `max_horizon`; tails are
/// Wilson 99% upper bounds and the reported value is the max over starts.
pub struct McTails {
    n_blocks: usize,
    starts: Vec<usize>,
    reps: u64,
    seed: u64,
    max_horizon: u64,
    /// `paths[s][r * max_horizon + u]` = block of `X_{u+1}`.
    paths: Vec<Vec<u16>>,
    /// `(T, kappa[s][r * n_blocks + i])` for the last horizon asked.
    kappa: Mutex<Option<(u64, Arc<Vec<Vec<u32>>>)>>,
    restarts: usize,
}

impl McTails {
    pub fn new<S: Sampler + ?Sized>(
        sampler: &S,
        partition: &Partition,
        starts: &[usize],
        max_horizon: u64,
        reps: u64,
        seed: u64,
    ) -> Result<Self> {
        if reps < 1000 {
            return Err(Error::InvalidParameter("occupation tails need reps >= 1000".into()));
        }
        if partition.n_states() != sampler.n_states() {
            return Err(Error::DimensionMismatch {
                expected: sampler.n_states(),
                got: partition.n_states(),
            });
        }
        let nb = partition.n_blocks();
        if nb > u16::MAX as usize || starts.is_empty() || starts.iter().any(|&z| z >= sampler.n_states()) {
            return Err(Error::InvalidParameter("bad start list or too many blocks".into()));
        }
        let h = max_horizon as usize;
        let paths = starts
            .iter()
            .enumerate()
            .map(|(si, &z)| {
                let per: Vec<Vec<u16>> = (0..reps)
                    .into_par_iter()
                    .map(|r| {
                        let mut rng = replica_rng(seed, (si as u64) << 40 | r);
                        let mut x = z;
                        (0..h)
                            .map(|_| {
                                x = sampler.step(x, &mut rng);
                                partition.block_of(x) as u16
                            })
                            .collect()
                    })
                    .collect();
                per.concat()
            })
            .collect();
        Ok(Self {
            n_blocks: nb,
            starts: starts.to_vec(),
            reps,
            seed,
            max_horizon,
            paths,
            kappa: Mutex::new(None),
            restarts: 8,
        })
    }

    pub fn max_horizon(&self) -> u64 {
        self.max_horizon
    }

    fn kappa_at(&self, horizon: u64) -> Arc<Vec<Vec<u32>>> {
        let mut guard = self.kappa.lock().expect("kappa cache poisoned");
        if let Some((h, k)) = guard.as_ref() {
            if *h == horizon {
                return k.clone();
            }
        }
        let nb = self.n_blocks;
        let h = self.max_horizon as usize;
        let upto = horizon as usize;
        let k: Vec<Vec<u32>> = self
            .paths
            .iter()
            .map(|p| {
                let mut out = vec![0u32; self.reps as usize * nb];
                out.par_chunks_mut(nb).enumerate().for_each(|(r, row)| {
                    for &b in &p[r * h..r * h + upto] {
                        row[b as usize] += 1;
                    }
                });
                out
            })
            .collect();
        let k = Arc::new(k);
        *guard = Some((horizon, k.clone()));
        k
    }

    /// `bits[i]` marks the replicas with `kappa_i(T) < t`.
    fn bitsets(&self, kappa: &[u32], t: u64) -> Vec<Vec<u64>> {
        let nb = self.n_blocks;
        let words = (self.reps as usize).div_ceil(64);
        let mut bits = vec![vec![0u64; words]; nb];
        for (r, row) in kappa.chunks(nb).enumerate() {
            for (i, &k) in row.iter().enumerate() {
                if (k as u64) < t {
                    bits[i][r / 64] |= 1 << (r % 64);
                }
            }
        }
        bits
    }

    fn estimate(&self, count: u64) -> f64 {
        TailEstimate::from_counts(count, self.reps).wilson_hi
    }
}

fn and_count(a: &[u64], b: &[u64]) -> u64 {
    a.iter().zip(b).map(|(x, y)| (x & y).count_ones() as u64).sum()
}

fn set_bits(bits: &[Vec<u64>], set: &[usize], words: usize) -> Vec<u64> {
    let mut acc = vec![u64::MAX; words];
    for &i in set {
        acc.iter_mut().zip(&bits[i]).for_each(|(a, b)| *a &= b);
    }
    acc
}

fn count(bits: &[Vec<u64>], set: &[usize], words: usize, reps: u64) -> u64 {
    let c: u64 = set_bits(bits, set, words).iter().map(|w| w.count_ones() as u64).sum();
    c.min(reps)
}

impl OccupationTails for McTails {
    fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    fn joint_tail(&self, blocks: &[usize], horizon: u64, t: u64) -> Result<f64> {
        if t == 0 {
            return Ok(0.0);
        }
        if blocks.is_empty() || t > horizon {
            return Ok(1.0);
        }
        let h = horizon.min(self.max_horizon);
        let kappa = self.kappa_at(h);
        let nb = self.n_blocks;
        let mut worst = 0u64;
        for k in kappa.iter() {
            let c = k
                .chunks(nb)
                .filter(|row| blocks.iter().all(|&i| (row[i] as u64) < t))
                .count() as u64;
            worst = worst.max(c);
        }
        Ok(self.estimate(worst))
    }

    /// Exhaustive over enumerated minimal sets, otherwise greedy
    /// construction plus swap local search from several random starts.
    fn worst_joint_tail(&self, sets: &QualifyingSets, horizon: u64, t: u64) -> Result<(f64, Vec<usize>)> {
        if t == 0 {
            return Ok((0.0, Vec::new()));
        }
        let h = horizon.min(self.max_horizon);
        let kappa = self.kappa_at(h);
        let words = (self.reps as usize).div_ceil(64);
        let mut best = (0u64, Vec::new());
        for (si, k) in kappa.iter().enumerate() {
            let bits = self.bitsets(k, t);
            let cand = match &sets.minimal {
                Some(list) => list
                    .iter()
                    .map(|s| (count(&bits, s, words, self.reps), s.clone()))
                    .max_by_key(|p| p.0)
                    .unwrap_or((0, Vec::new())),
                None => local_search(&bits, sets, words, self.reps, self.restarts, self.seed ^ si as u64),
            };
            if cand.0 > best.0 || best.1.is_empty() {
                best = cand;
            }
        }
        Ok((self.estimate(best.0), best.1))
    }

    fn provenance(&self) -> TailProvenance {
        TailProvenance::Mc {
            reps: self.reps,
            seed: self.seed,
            starts: self.starts.clone(),
            exhaustive: false,
        }
    }
}

fn trim_to_minimal(set: &mut Vec<usize>, sets: &QualifyingSets) {
    // dropping a block only enlarges the event, so drop while still qualifying
    let mut i = 0;
    while i < set.len() {
        let mut trial = set.clone();
        trial.remove(i);
        if !trial.is_empty() && sets.qualifies(&trial) {
            *set = trial;
        } else {
            i += 1;
        }
    }
}

fn local_search(
    bits: &[Vec<u64>],
    sets: &QualifyingSets,
    words: usize,
    reps: u64,
    restarts: usize,
    seed: u64,
) -> (u64, Vec<usize>) {
    use rand::seq::SliceRandom;
    let nb = bits.len();
    let mut best = (0u64, Vec::new());
    let mut rng = replica_rng(seed, 0xB175);
    for attempt in 0..=restarts {
        let mut set: Vec<usize> = Vec::new();
        if attempt == 0 {
            // greedy: keep the surviving replica set as large as possible
            let mut acc = vec![u64::MAX; words];
            while !sets.qualifies(&set) {
                let pick = (0..nb)
                    .filter(|i| !set.contains(i))
                    .max_by_key(|&i| (and_count(&acc, &bits[i]), std::cmp::Reverse(i)))
                    .expect("qualifying set exists");
                acc.iter_mut().zip(&bits[pick]).for_each(|(a, b)| *a &= b);
                set.push(pick);
            }
        } else {
            let mut order: Vec<usize> = (0..nb).collect();
            order.shuffle(&mut rng);
            for i in order {
                if sets.qualifies(&set) {
                    break;
                }
                set.push(i);
            }
        }
        trim_to_minimal(&mut set, sets);
        let mut cur = count(bits, &set, words, reps);
        loop {
            // leave-one-out intersections make each swap a single AND
            let k = set.len();
            let mut prefix = vec![vec![u64::MAX; words]; k + 1];
            for a in 0..k {
                prefix[a + 1] = prefix[a].iter().zip(&bits[set[a]]).map(|(x, y)| x & y).collect();
            }
            let mut suffix = vec![u64::MAX; words];
            let mut swap = None;
            'outer: for a in (0..k).rev() {
                let loo: Vec<u64> = prefix[a].iter().zip(&suffix).map(|(x, y)| x & y).collect();
                let rest = sets.need - 1e-12 - (set.iter().map(|&i| sets.masses[i]).sum::<f64>() - sets.masses[set[a]]);
                for b in 0..nb {
                    if set.contains(&b) || sets.masses[b] < rest {
                        continue;
                    }
                    if and_count(&loo, &bits[b]).min(reps) > cur {
                        swap = Some((a, b));
                        break 'outer;
                    }
                }
                suffix.iter_mut().zip(&bits[set[a]]).for_each(|(x, y)| *x &= y);
            }
            let Some((a, b)) = swap else { break };
            set[a] = b;
            trim_to_minimal(&mut set, sets);
            cur = count(bits, &set, words, reps);
        }
        if cur > best.0 || best.1.is_empty() {
            set.sort_unstable();
            best = (cur, set);
        }
    }
    best
}
