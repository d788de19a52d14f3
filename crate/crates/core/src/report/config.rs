use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bounds::PeresSousiConstants;
use crate::error::{Error, Result};
use crate::zoo::ChainSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Analyze,
    Bounds,
    Audit,
    Reproduce,
}

impl Task {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "analyze" => Task::Analyze,
            "bounds" => Task::Bounds,
            "audit" => Task::Audit,
            "reproduce" => Task::Reproduce,
            other => return Err(Error::ConfigInvalid(format!("unknown task {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(Error::ConfigInvalid(format!("unknown format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChainSource {
    Spec(ChainSpec),
    /// Kernel file and partition file; `None` means a single block.
    Files { kernel: PathBuf, partition: Option<PathBuf> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub chain: Option<ChainSource>,
    pub tasks: Vec<Task>,
    pub suites: Vec<String>,
    pub constants: PeresSousiConstants,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub format: Format,
}

type Sections = BTreeMap<String, BTreeMap<String, String>>;

/// Parses the sectioned `key = value` format:
///
/// ```text
/// [chain]
/// spec = pince_nez:m=8
/// [run]
/// tasks = analyze, bounds
/// seed = 1
/// output_dir = out
/// ```
///
/// Relative file paths resolve against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let mut sections: Sections = BTreeMap::new();
    let mut current = String::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        let (key, value) =
            line.split_once('=').ok_or(Error::Parse { line: k + 1, msg: format!("expected key = value, got {line:?}") })?;
        if current.is_empty() {
            return Err(Error::Parse { line: k + 1, msg: "key outside any section".into() });
        }
        sections.entry(current.clone()).or_default().insert(key.trim().to_string(), value.trim().to_string());
    }
    from_sections(sections, base)
}

/// The JSON form: an object of sections, each an object of scalar values
/// (arrays are joined with commas).
pub fn parse_config_json(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    let obj = v.as_object().ok_or_else(|| Error::ConfigInvalid("top level must be an object".into()))?;
    let mut sections: Sections = BTreeMap::new();
    for (name, body) in obj {
        let body = body.as_object().ok_or_else(|| Error::ConfigInvalid(format!("section {name} must be an object")))?;
        let entry = sections.entry(name.clone()).or_default();
        for (k, val) in body {
            let s = match val {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Array(a) => a
                    .iter()
                    .map(|x| x.as_str().map(str::to_string).unwrap_or_else(|| x.to_string()))
                    .collect::<Vec<_>>()
                    .join(","),
                other => other.to_string(),
            };
            entry.insert(k.clone(), s);
        }
    }
    from_sections(sections, base)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    if path.extension().is_some_and(|e| e == "json") {
        parse_config_json(&text, base)
    } else {
        parse_config(&text, base)
    }
}

fn list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(str::to_string).collect()
}

fn from_sections(mut sections: Sections, base: &Path) -> Result<ExperimentConfig> {
    let chain_sec = sections.remove("chain").unwrap_or_default();
    let run = sections.remove("run").unwrap_or_default();
    let consts = sections.remove("constants").unwrap_or_default();
    if let Some(extra) = sections.keys().next() {
        return Err(Error::ConfigInvalid(format!("unknown section [{extra}]")));
    }
    let resolve = |p: &str| {
        let p = PathBuf::from(p);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };
    let chain = match (chain_sec.get("spec"), chain_sec.get("kernel")) {
        (Some(_), Some(_)) => return Err(Error::ConfigInvalid("give either chain.spec or chain.kernel".into())),
        (Some(s), None) => Some(ChainSource::Spec(ChainSpec::parse(s)?)),
        (None, Some(k)) => {
            let kernel = resolve(k);
            if !kernel.exists() {
                return Err(Error::ConfigInvalid(format!("kernel file {} does not exist", kernel.display())));
            }
            let partition = match chain_sec.get("partition").map(String::as_str) {
                None | Some("canonical") => None,
                Some(p) => {
                    let p = resolve(p);
                    if !p.exists() {
                        return Err(Error::ConfigInvalid(format!("partition file {} does not exist", p.display())));
                    }
                    Some(p)
                }
            };
            Some(ChainSource::Files { kernel, partition })
        }
        (None, None) => None,
    };
    let tasks = run.get("tasks").map(|s| list(s)).unwrap_or_default();
    if tasks.is_empty() {
        return Err(Error::ConfigInvalid("run.tasks is empty".into()));
    }
    let tasks = tasks.iter().map(|t| Task::parse(t)).collect::<Result<Vec<_>>>()?;
    let suites = run.get("suites").map(|s| list(s)).unwrap_or_default();
    if tasks.contains(&Task::Reproduce) && suites.is_empty() {
        return Err(Error::ConfigInvalid("reproduce task needs run.suites".into()));
    }
    if tasks.iter().any(|t| *t != Task::Reproduce) && chain.is_none() {
        return Err(Error::ConfigInvalid("analyze, bounds and audit need a [chain] section".into()));
    }
    let seed = match run.get("seed") {
        Some(s) => s.parse().map_err(|_| Error::ConfigInvalid(format!("bad seed {s:?}")))?,
        None if tasks.contains(&Task::Reproduce) || tasks.contains(&Task::Audit) => {
            return Err(Error::ConfigInvalid("run.seed is required for audit and reproduce".into()))
        }
        None => 0,
    };
    let output_dir = resolve(run.get("output_dir").map(String::as_str).unwrap_or("."));
    let format = Format::parse(run.get("format").map(String::as_str).unwrap_or("json"))?;
    let constants = if consts.is_empty() {
        PeresSousiConstants::default()
    } else {
        let joined = consts.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(",");
        PeresSousiConstants::parse(&joined)?
    };
    Ok(ExperimentConfig { chain, tasks, suites, constants, seed, output_dir, format })
}
