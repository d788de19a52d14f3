//! Generators for the example chains, each with its canonical partition.

mod chains;
pub mod graph;
mod kcip;
mod torus;

pub use chains::{
    expander_pair, pince_nez, random_partition, random_reversible, toy_kcip, toy_kcip_index,
    ExpanderPair,
};
pub use graph::{random_regular, Graph};
pub use kcip::{kcip, Kcip, Neighborhood};
pub use torus::{coordinate_weight, height, omega_k_mass, torus_metropolis, TorusChain};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::decomposition::Partition;
use crate::error::{Error, Result};
use crate::kernel::{StationaryDistribution, StochasticKernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    PinceNez,
    ExpanderPair,
    ToyKcip,
    Kcip,
    TorusMetropolis,
}

impl Family {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "pince_nez" => Family::PinceNez,
            "expander_pair" => Family::ExpanderPair,
            "toy_kcip" => Family::ToyKcip,
            "kcip" => Family::Kcip,
            "torus_metropolis" => Family::TorusMetropolis,
            other => return Err(Error::ConfigInvalid(format!("unknown chain family {other:?}"))),
        })
    }
}

/// A named example chain with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub family: Family,
    pub params: BTreeMap<String, String>,
    pub seed: Option<u64>,
}

impl ChainSpec {
    /// Parses `family:key=value,key=value`.
    pub fn parse(s: &str) -> Result<Self> {
        let (fam, rest) = s.split_once(':').unwrap_or((s, ""));
        let family = Family::parse(fam.trim())?;
        let mut params = BTreeMap::new();
        let mut seed = None;
        for kv in rest.split(',').map(str::trim).filter(|kv| !kv.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::ConfigInvalid(format!("expected key=value, got {kv:?}")))?;
            if k.trim() == "seed" {
                seed = Some(parse_num(v, "seed")?);
            } else {
                params.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Self { family, params, seed })
    }

    fn get<T: std::str::FromStr>(&self, key: &str, default: Option<T>) -> Result<T> {
        match self.params.get(key) {
            Some(v) => parse_num(v, key),
            None => default.ok_or_else(|| Error::ConfigInvalid(format!("missing parameter {key}"))),
        }
    }
}

fn parse_num<T: std::str::FromStr>(v: &str, key: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::ConfigInvalid(format!("bad value {v:?} for {key}")))
}

#[derive(Debug, Clone)]
pub struct BuiltChain {
    pub kernel: StochasticKernel,
    pub partition: Partition,
    /// Closed-form stationary law when the family has one.
    pub pi: Option<StationaryDistribution>,
}

pub fn build(spec: &ChainSpec) -> Result<BuiltChain> {
    let seed = spec.seed.unwrap_or(0);
    match spec.family {
        Family::PinceNez => {
            let (kernel, partition) = pince_nez(spec.get("m", None)?)?;
            let n = kernel.n_states();
            Ok(BuiltChain { kernel, partition, pi: Some(StationaryDistribution::uniform(n)) })
        }
        Family::ToyKcip => {
            let (kernel, partition) = toy_kcip(spec.get("m", None)?, spec.get("d", Some(1))?)?;
            Ok(BuiltChain { kernel, partition, pi: None })
        }
        Family::ExpanderPair => {
            let m: usize = spec.get("m", None)?;
            let eps_default = 0.25f64.min(1.0 / (m as f64).ln());
            let c = expander_pair(m, spec.get("d", Some(6))?, spec.get("epsilon", Some(eps_default))?, seed)?;
            Ok(BuiltChain { kernel: c.kernel, partition: c.partition, pi: None })
        }
        Family::Kcip => {
            let graph = match spec.params.get("graph").map(String::as_str).unwrap_or("cycle") {
                "cycle" => Graph::cycle(spec.get("n", Some(5))?)?,
                "lattice" => Graph::lattice_torus(spec.get("L", Some(2))?, spec.get("dim", Some(3))?)?,
                other => return Err(Error::ConfigInvalid(format!("unknown graph {other:?}"))),
            };
            let k = kcip(graph, spec.get("c", Some(1.0))?, Neighborhood::Adjacency)?;
            let (partition, _) = k.partition(spec.get("n_cap", Some(3))?)?;
            Ok(BuiltChain { kernel: k.explicit_kernel()?, partition, pi: Some(k.stationary()) })
        }
        Family::TorusMetropolis => {
            let k_trace = match spec.params.get("k") {
                Some(v) => Some(parse_num(v, "k")?),
                None => None,
            };
            let t = torus_metropolis(
                spec.get("m", None)?,
                spec.get("l", Some(3))?,
                spec.get("C", Some(7.0))?,
                k_trace,
            )?;
            Ok(BuiltChain { kernel: t.kernel, partition: t.partition, pi: Some(t.pi) })
        }
    }
}
