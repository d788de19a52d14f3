use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mixdecomp::bounds::PeresSousiConstants;
use mixdecomp::report::{
    self, emit_report, load_config, run_experiment, ChainSource, ExperimentConfig, Format, Report, Task, SUITES,
};
use mixdecomp::sim::{simulate, write_trajectory, KernelSampler};
use mixdecomp::zoo::ChainSpec;
use mixdecomp::Error;

#[derive(Parser)]
#[command(name = "mixdecomp", version, about = "Decomposition bounds for finite Markov chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ChainArgs {
    /// Kernel file (dense or sparse text format).
    #[arg(long, conflicts_with = "chain")]
    kernel: Option<PathBuf>,
    /// Partition file, or "canonical" for a single block.
    #[arg(long, requires = "kernel")]
    partition: Option<String>,
    /// Example chain, e.g. `pince_nez:m=8`.
    #[arg(long)]
    chain: Option<String>,
}

#[derive(Args, Clone)]
struct OutArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value = "json", value_parser = ["json", "csv"])]
    format: String,
    /// `c_alpha=..,c_alpha_prime=..`; omitted constants stay uncalibrated.
    #[arg(long)]
    constants: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Exact mixing time, block decomposition and projected chain.
    Analyze {
        #[command(flatten)]
        chain: ChainArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Every applicable decomposition bound.
    Bounds {
        #[command(flatten)]
        chain: ChainArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Hitting/mixing and spread audits.
    Audit {
        #[command(flatten)]
        chain: ChainArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Reproduction suites; `all` runs every suite.
    Reproduce {
        #[arg(long = "suite", required = true)]
        suites: Vec<String>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// One trajectory with block occupation counts.
    Simulate {
        #[command(flatten)]
        chain: ChainArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, default_value_t = 10_000)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        start: usize,
    },
    /// Runs a configuration file (sectioned key=value, or JSON).
    Run { config: PathBuf },
}

fn chain_source(c: &ChainArgs) -> Result<ChainSource, Error> {
    match (&c.chain, &c.kernel) {
        (Some(s), None) => Ok(ChainSource::Spec(ChainSpec::parse(s)?)),
        (None, Some(k)) => {
            if !k.exists() {
                return Err(Error::ConfigInvalid(format!("kernel file {} does not exist", k.display())));
            }
            let partition = match c.partition.as_deref() {
                None | Some("canonical") => None,
                Some(p) => Some(PathBuf::from(p)),
            };
            Ok(ChainSource::Files { kernel: k.clone(), partition })
        }
        _ => Err(Error::ConfigInvalid("give --chain or --kernel".into())),
    }
}

fn config(task: Task, chain: Option<ChainSource>, out: &OutArgs, suites: Vec<String>) -> Result<ExperimentConfig, Error> {
    let seed = match (out.seed, task) {
        (Some(s), _) => s,
        (None, Task::Audit | Task::Reproduce) => {
            return Err(Error::ConfigInvalid("--seed is required for audit and reproduce".into()))
        }
        (None, _) => 0,
    };
    let constants = match &out.constants {
        Some(s) => PeresSousiConstants::parse(s)?,
        None => PeresSousiConstants::default(),
    };
    Ok(ExperimentConfig {
        chain,
        tasks: vec![task],
        suites,
        constants,
        seed,
        output_dir: out.out.clone(),
        format: Format::parse(&out.format)?,
    })
}

fn run(cli: Cli) -> Result<(), Error> {
    let command = std::env::args().collect::<Vec<_>>().join(" ");
    let cfg = match cli.command {
        Command::Analyze { chain, out } => config(Task::Analyze, Some(chain_source(&chain)?), &out, vec![])?,
        Command::Bounds { chain, out } => config(Task::Bounds, Some(chain_source(&chain)?), &out, vec![])?,
        Command::Audit { chain, out } => config(Task::Audit, Some(chain_source(&chain)?), &out, vec![])?,
        Command::Reproduce { suites, out } => {
            let suites = if suites.iter().any(|s| s == "all") {
                SUITES.iter().map(|s| s.to_string()).collect()
            } else {
                suites
            };
            config(Task::Reproduce, None, &out, suites)?
        }
        Command::Run { config } => load_config(&config)?,
        Command::Simulate { chain, out, steps, start } => {
            let cfg = config(Task::Analyze, Some(chain_source(&chain)?), &out, vec![])?;
            let c = report::Chain::load(cfg.chain.as_ref().expect("chain given"))?;
            let traj = simulate(&KernelSampler::new(&c.kernel), &c.partition, start, steps, cfg.seed)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join("trajectory.bin");
            write_trajectory(&path, c.kernel.n_states(), &traj.states)?;
            let mut r = Report::new(&command, Some(c.label.clone()), cfg.seed);
            let fractions: Vec<_> = traj
                .record
                .kappa
                .iter()
                .map(|&k| report::mc(k as f64 / steps as f64, 1, cfg.seed))
                .collect();
            r.sections.insert(
                "simulate".into(),
                json!({ "steps": steps, "start": start, "trajectory": path, "occupation_fraction": fractions,
                        "kappa": traj.record.kappa, "transitions": traj.record.transitions }),
            );
            emit_report(&r, cfg.format, &cfg.output_dir)?;
            println!("wrote {}", cfg.output_dir.join("report.json").display());
            return Ok(());
        }
    };
    let (rep, files) = run_experiment(&cfg, &command)?;
    if let Some(b) = rep.sections.get("bounds") {
        println!("{:<10} {:>14}  flag", "bound", "value");
        for r in b["results"].as_array().into_iter().flatten() {
            let flag = if r["universal_constant_flag"].as_bool() == Some(true) { "up to universal constant" } else { "" };
            println!("{:<10} {:>14.2}  {flag}", r["name"].as_str().unwrap_or(""), r["value"].as_f64().unwrap_or(f64::NAN));
        }
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn init_threads() -> Result<(), Error> {
    if let Ok(v) = std::env::var("MIXDECOMP_THREADS") {
        let n: usize = v.parse().map_err(|_| Error::ConfigInvalid(format!("MIXDECOMP_THREADS={v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::AssertionFailed(_) | Error::SuiteFailed { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
