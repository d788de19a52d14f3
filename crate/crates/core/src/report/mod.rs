//! Experiment runner and versioned reports.
//!
//! A [`Report`] holds named JSON sections plus plot-ready tables. Numbers
//! in sections are wrapped as `{"value": .., "provenance": ..}`; table rows
//! carry a `provenance` column. Files are written to a temporary name and
//! renamed, so a failed run leaves no partial report.

pub mod config;
pub mod evaluate;
pub mod suites;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::bounds::{peres_sousi_audit, Provenance, SubsetMode, EXACT_AUDIT_LIMIT};
use crate::error::{Error, Result};
use crate::wellcover::concentration_audit;
pub use config::{load_config, parse_config, parse_config_json, ChainSource, ExperimentConfig, Format, Task};
pub use evaluate::{
    analyze, calibrate_on_reference, evaluate_bounds, heavy_blocks, Analysis, BoundSet, BoundSettings, Chain,
};
pub use suites::{reproduce_suite, run_suite, Check, SuiteOutcome, SUITES};

pub const SCHEMA_VERSION: &str = "mixdecomp-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Header row, then one line per row; strings containing commas or
    /// quotes are quoted.
    pub fn to_csv(&self) -> String {
        let cell = |v: &Value| match v {
            Value::String(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Value::String(s) => s.clone(),
            Value::Null => String::new(),
            other => other.to_string(),
        };
        let mut out = self.columns.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.iter().map(cell).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub tool_version: String,
    pub command: String,
    pub chain: Option<String>,
    pub seed: u64,
    pub sections: BTreeMap<String, Value>,
    pub tables: Vec<Table>,
}

impl Report {
    pub fn new(command: &str, chain: Option<String>, seed: u64) -> Self {
        Self {
            schema: SCHEMA_VERSION.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            chain,
            seed,
            sections: BTreeMap::new(),
            tables: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty() && self.tables.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// SHA-256 of the JSON form; stable for fixed seeds.
    pub fn hash(&self) -> String {
        let d = Sha256::digest(self.to_json().as_bytes());
        d.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn exact(v: impl Into<Value>) -> Value {
    json!({ "value": v.into(), "provenance": Provenance::Exact })
}

pub fn mc(v: impl Into<Value>, reps: u64, seed: u64) -> Value {
    json!({ "value": v.into(), "provenance": Provenance::Mc { reps, seed } })
}

pub fn formula(v: impl Into<Value>, universal_constant: bool) -> Value {
    json!({ "value": v.into(), "provenance": Provenance::Formula { universal_constant } })
}

fn provenance_tag(p: &Provenance) -> String {
    match p {
        Provenance::Exact => "exact".into(),
        Provenance::Mc { reps, seed } => format!("mc(reps={reps};seed={seed})"),
        Provenance::Formula { universal_constant } => format!("formula(universal_constant={universal_constant})"),
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::Io(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = std::fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes `report.json`, plus `<table>.csv` per table in CSV format. All
/// files are staged before any is renamed into place.
pub fn emit_report(report: &Report, format: Format, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if report.is_empty() {
        return Err(Error::InvalidParameter("report has no results".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut files: Vec<(PathBuf, String)> = vec![(out_dir.join("report.json"), report.to_json())];
    if format == Format::Csv {
        for t in &report.tables {
            files.push((out_dir.join(format!("{}.csv", t.name)), t.to_csv()));
        }
    }
    let mut staged = Vec::new();
    for (path, text) in &files {
        let tmp = out_dir.join(format!(
            ".{}.tmp{}",
            path.file_name().unwrap_or_default().to_string_lossy(),
            std::process::id()
        ));
        let res = std::fs::File::create(&tmp).and_then(|mut f| {
            f.write_all(text.as_bytes())?;
            f.sync_all()
        });
        if let Err(e) = res {
            staged.iter().for_each(|(t, _): &(PathBuf, PathBuf)| {
                let _ = std::fs::remove_file(t);
            });
            let _ = std::fs::remove_file(&tmp);
            return Err(e.into());
        }
        staged.push((tmp, path.clone()));
    }
    for (tmp, path) in &staged {
        std::fs::rename(tmp, path)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

pub fn add_analysis(report: &mut Report, a: &Analysis) {
    let d = &a.decomposition;
    report.sections.insert(
        "analyze".into(),
        json!({
            "n_states": d.blocks.iter().map(Vec::len).sum::<usize>(),
            "n_blocks": d.blocks.len(),
            "tau_mix": exact(a.tau_mix),
            "relaxation_time": a.relaxation_time.map(exact),
            "phi_i": d.block_mixing_times.iter().map(|&p| exact(p)).collect::<Vec<_>>(),
            "phi_max": exact(d.phi_max),
            "block_masses": d.block_masses.iter().map(|&m| exact(m)).collect::<Vec<_>>(),
            "projected_kernel": exact(serde_json::to_value(d.projected.to_rows()).unwrap_or(Value::Null)),
            "chain_reversibility_residual": exact(a.chain_residual),
            "projected_reversibility_residual": exact(a.projected_residual),
        }),
    );
    let mut t = Table::new("mixing_profile", &["t", "distance", "provenance"]);
    for (s, dist) in a.profile.points() {
        t.push(vec![json!(s), json!(dist), json!("exact")]);
    }
    report.tables.push(t);
}

pub fn add_bounds(report: &mut Report, set: &BoundSet, constants: &crate::bounds::PeresSousiConstants) {
    let mut t = Table::new("bounds", &["name", "value", "universal_constant_flag", "provenance"]);
    for r in &set.results {
        t.push(vec![
            json!(r.name),
            json!(r.value),
            json!(r.universal_constant_flag),
            json!(provenance_tag(&r.provenance)),
        ]);
    }
    report.tables.push(t);
    report.sections.insert(
        "bounds".into(),
        json!({
            "constants": constants,
            "blocks_I": set.blocks_i,
            "results": set.results,
            "skipped": set.skipped,
            "flag": if constants.calibrated { "calibrated" } else { "up to universal constant" },
        }),
    );
}

/// Hitting/mixing audit, and a spread audit on the two heaviest blocks.
pub fn add_audit(report: &mut Report, chain: &Chain, a: &Analysis, seed: u64) -> Result<()> {
    let mode = if chain.kernel.n_states() <= EXACT_AUDIT_LIMIT {
        SubsetMode::Exact
    } else {
        SubsetMode::Sampled { samples: 2000, seed }
    };
    let ps = peres_sousi_audit(&chain.kernel, &chain.pi, 0.25, mode, evaluate::ANALYSIS_HORIZON)?;
    let max_hit = match mode {
        SubsetMode::Exact => exact(ps.max_hit),
        SubsetMode::Sampled { samples, seed } => mc(ps.max_hit, samples as u64, seed),
    };
    let mut section = json!({
        "hitting_mixing": {
            "tau_mix": exact(ps.tau_mix),
            "max_hit": max_hit,
            "argmax": ps.argmax,
            "ratio": ps.ratio,
            "subsets_evaluated": ps.subsets_evaluated,
        }
    });
    let masses = &a.decomposition.block_masses;
    if masses.len() >= 2 {
        let order = heavy_blocks(masses, 1.0 - 1e-12);
        let (i, j) = (order[0], order[1]);
        let reps = 1000;
        let c = concentration_audit(
            &chain.kernel,
            &chain.pi,
            &chain.partition,
            i,
            j,
            &[100, 1000],
            &[0.05, 0.1],
            reps,
            seed,
            chain.partition.members(i)[0],
            a.decomposition.phi_max.max(1) as f64,
        )?;
        let mut t = Table::new("concentration", &["orientation", "c", "t", "empirical", "wilson_hi", "bound", "provenance"]);
        let tag = format!("mc(reps={reps};seed={seed})");
        for r in &c.rows {
            t.push(vec![
                json!(r.orientation),
                json!(r.c),
                json!(r.t),
                json!(r.empirical),
                json!(r.wilson_hi),
                json!(r.bound),
                json!(tag),
            ]);
        }
        report.tables.push(t);
        section["concentration"] = json!({ "i": i, "j": j, "violations": c.violations().len(), "reps": reps, "seed": seed });
    }
    report.sections.insert("audit".into(), section);
    Ok(())
}

pub fn add_suite(report: &mut Report, s: &SuiteOutcome) {
    report.sections.insert(format!("suite_{}", s.name), serde_json::to_value(s).unwrap_or(Value::Null));
    report.tables.push(s.table.clone());
}

/// Runs every task in `config` and writes the report. A failed suite
/// still writes its (complete) report before the error is returned.
pub fn run_experiment(config: &ExperimentConfig, command: &str) -> Result<(Report, Vec<PathBuf>)> {
    let chain = config.chain.as_ref().map(Chain::load).transpose()?;
    let mut report = Report::new(command, chain.as_ref().map(|c| c.label.clone()), config.seed);
    let mut analysis = None;
    let mut failure = None;
    for task in &config.tasks {
        match task {
            Task::Reproduce => {
                for name in &config.suites {
                    let s = run_suite(name, config.seed)?;
                    if !s.passed && failure.is_none() {
                        failure = Some(s.failure());
                    }
                    add_suite(&mut report, &s);
                }
            }
            _ => {
                let c = chain.as_ref().ok_or_else(|| Error::ConfigInvalid("task needs a chain".into()))?;
                if analysis.is_none() {
                    analysis = Some(analyze(c)?);
                }
                let a = analysis.as_ref().expect("analysis computed");
                match task {
                    Task::Analyze => add_analysis(&mut report, a),
                    Task::Bounds => {
                        let settings = BoundSettings { seed: config.seed, ..BoundSettings::default() };
                        let set = evaluate_bounds(c, a, &config.constants, &settings)?;
                        add_bounds(&mut report, &set, &config.constants);
                    }
                    Task::Audit => add_audit(&mut report, c, a, config.seed)?,
                    Task::Reproduce => unreachable!(),
                }
            }
        }
    }
    let files = emit_report(&report, config.format, &config.output_dir)?;
    match failure {
        Some(e) => Err(e),
        None => Ok((report, files)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quotes_and_header() {
        let mut t = Table::new("x", &["a", "b"]);
        t.push(vec![json!("p,q"), json!(1.5)]);
        assert_eq!(t.to_csv(), "a,b\n\"p,q\",1.5\n");
    }

    #[test]
    fn emit_round_trips_and_refuses_empty() {
        let dir = tempfile::tempdir().unwrap();
        let empty = Report::new("test", None, 0);
        assert!(emit_report(&empty, Format::Json, dir.path()).is_err());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
        let mut r = Report::new("test", Some("c".into()), 5);
        r.sections.insert("s".into(), exact(3));
        let mut t = Table::new("tab", &["m", "value"]);
        t.push(vec![json!(8), json!(54)]);
        r.tables.push(t);
        let files = emit_report(&r, Format::Csv, dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        let back: Report = serde_json::from_str(&std::fs::read_to_string(&files[0]).unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.hash(), r.hash());
        let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert!(names.iter().all(|n| !n.to_string_lossy().starts_with('.')));
    }

    #[test]
    fn analyze_report_is_deterministic() {
        let cfg = parse_config(
            "[chain]\nspec = pince_nez:m=4\n[run]\ntasks = analyze, bounds\nseed = 2\n",
            Path::new("."),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig { output_dir: dir.path().to_path_buf(), ..cfg };
        let (a, _) = run_experiment(&cfg, "test").unwrap();
        let (b, _) = run_experiment(&cfg, "test").unwrap();
        assert_eq!(a.hash(), b.hash());
        let an = &a.sections["analyze"];
        assert_eq!(an["phi_i"].as_array().unwrap().len(), 2);
        assert_eq!(an["tau_mix"]["provenance"]["kind"], "exact");
        assert_eq!(a.sections["bounds"]["flag"], "up to universal constant");
    }
}
