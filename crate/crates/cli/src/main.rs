use std::collections::BTreeSet;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};
use spoofres_core::config::{load_config, preflight, ConfigError, Model, RunConfig};
use spoofres_core::export::{export_csv, ExportError, RunRecord};
use spoofres_core::medag::{enumerate_motifs, kbar_bound, verify_srmedag, MedagError};
use spoofres_core::scenarios;
use spoofres_core::sim::{run, snapshot_metrics, SimError, SimTrace};
use spoofres_core::NodeId;
use thiserror::Error;

#[derive(Parser)]
#[command(name = "spoofres", version, about = "Resilient distributed state estimation under identity spoofing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Strong robustness of the topology against each sufficiency threshold.
    CheckRobustness {
        #[arg(long)]
        config: PathBuf,
        /// Only report this mode.
        #[arg(long)]
        mode: Option<usize>,
    },
    /// Run the construction and report layers, termination and violations.
    BuildMedag {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        horizon: Option<u64>,
    },
    /// Re-check the construction recorded in a `run.json`.
    VerifyMedag {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Run one simulation and write CSV output.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a built-in scenario (s1 or s2).
    Scenario {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<u64>,
    },
    /// List the motifs of every follower in a recorded run.
    Motifs {
        #[arg(long)]
        trace: PathBuf,
        /// Step whose impersonation window marks suspects (default: the
        /// follower's activation step).
        #[arg(long)]
        at: Option<u64>,
    },
    /// Run one config over a range of seeds in parallel, one CSV row per mode.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `a..b` (exclusive) or `a..=b`.
        #[arg(long, value_parser = parse_seeds)]
        seeds: Range<u64>,
        #[arg(long)]
        horizon: Option<u64>,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Motif(#[from] MedagError),
    #[error("unknown scenario `{0}` (expected s1 or s2)")]
    UnknownScenario(String),
    #[error("mode {0} is not handled by the construction")]
    UnknownMode(usize),
    #[error("{0} construction violation(s)")]
    Violations(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(ConfigError::Io { .. }) => 1,
            CliError::Config(_) | CliError::UnknownScenario(_) | CliError::UnknownMode(_) | CliError::Violations(_) => {
                2
            }
            CliError::Export(ExportError::Json(_)) => 2,
            CliError::Export(_) | CliError::Motif(_) => 1,
            CliError::Sim(SimError::CapacityExceeded(_)) => 3,
            CliError::Sim(_) => 1,
        }
    }
}

fn parse_seeds(text: &str) -> Result<Range<u64>, String> {
    let (a, b, inclusive) = if let Some((a, b)) = text.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = text.split_once("..") {
        (a, b, false)
    } else {
        return Err(format!("expected a..b, got `{text}`"));
    };
    let a: u64 = a.trim().parse().map_err(|e| format!("bad start: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("bad end: {e}"))?;
    let end = if inclusive { b + 1 } else { b };
    if end <= a {
        return Err(format!("empty seed range `{text}`"));
    }
    Ok(a..end)
}

// a closed pipe (e.g. `| head`) is not an error worth reporting
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn print(value: &Value) {
    emit(&serde_json::to_string_pretty(value).expect("json value serializes"));
}

fn with_overrides(mut config: RunConfig, horizon: Option<u64>, seed: Option<u64>) -> RunConfig {
    if let Some(h) = horizon {
        config.params.horizon = h;
        if config.params.medag_horizon.is_some_and(|m| m > h) {
            config.params.medag_horizon = Some(h);
        }
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    config
}

fn construction_reports(model: &Model, trace: &SimTrace) -> Vec<Value> {
    let p = trace.params;
    trace
        .constructions
        .iter()
        .map(|c| {
            let report = verify_srmedag(&model.union_graph, c, &model.regular, p.f, p.beta);
            let bound =
                report.terminated.then(|| kbar_bound(report.longest_path as u64, p.k_bar, p.tau_bar, p.beta as u64));
            json!({
                "mode": c.mode,
                "terminated": report.terminated,
                "termination_step": report.termination_step,
                "longest_path": report.longest_path,
                "kbar_bound": bound,
                "layers": report.layers,
                "parents": c.parents,
                "violations": report.violations,
            })
        })
        .collect()
}

fn violation_count(reports: &[Value]) -> usize {
    reports.iter().map(|r| r["violations"].as_array().map_or(0, Vec::len)).sum()
}

fn simulate_to(config: &RunConfig, out: Option<&Path>) -> Result<(), CliError> {
    let model = Model::build(config)?;
    let trace = run(&model)?;
    let summary = snapshot_metrics(&trace, config.params.error_tolerance);
    if let Some(dir) = out {
        export_csv(config, &trace, &summary, dir)?;
    }
    print(&serde_json::to_value(&summary).expect("summary serializes"));
    Ok(())
}

fn motifs(record: &RunRecord, at: Option<u64>) -> Result<Value, CliError> {
    let model = Model::build(&record.config)?;
    let trace = &record.trace;
    let p = trace.params;
    let mut out = Vec::new();
    for c in &trace.constructions {
        for (&node, parents) in c.parents.iter().filter(|(n, _)| !c.sources.contains(n)) {
            let Some(step) = at.or(c.activated_at.get(&node).copied().flatten()) else {
                continue;
            };
            let impersonated: BTreeSet<NodeId> = trace.impersonated_towards(node, step);
            let found = enumerate_motifs(node, c.mode, parents, &impersonated, &model.spoofers, p.f, p.beta)?;
            out.push(json!({
                "mode": c.mode,
                "node": node,
                "required": (p.beta + 1) * p.f,
                "motifs": found,
            }));
        }
    }
    Ok(Value::Array(out))
}

fn sweep(config: &RunConfig, seeds: Range<u64>, horizon: Option<u64>) -> Result<(), CliError> {
    Model::build(config)?;
    let rows: Vec<Result<Vec<String>, CliError>> = seeds
        .into_par_iter()
        .map(|seed| {
            let cfg = with_overrides(config.clone(), horizon, Some(seed));
            let model = Model::build(&cfg)?;
            let trace = run(&model)?;
            let summary = snapshot_metrics(&trace, cfg.params.error_tolerance);
            let reports = construction_reports(&model, &trace);
            let opt = |v: Option<String>| v.unwrap_or_default();
            Ok(summary
                .modes
                .iter()
                .map(|m| {
                    let violations = reports
                        .iter()
                        .find(|r| r["mode"] == m.mode)
                        .map(|r| r["violations"].as_array().map_or(0, Vec::len).to_string());
                    [
                        seed.to_string(),
                        m.mode.to_string(),
                        opt(m.final_max_error.map(|v| v.to_string())),
                        opt(m.first_below_tolerance.map(|v| v.to_string())),
                        opt(m.decay_rate.map(|v| v.to_string())),
                        opt(m.termination_step.map(|v| v.to_string())),
                        opt(m.kbar_bound.map(|v| v.to_string())),
                        opt(violations),
                    ]
                    .join(",")
                })
                .collect())
        })
        .collect();
    emit("seed,mode,final_max_error,first_below_tolerance,decay_rate,termination_step,kbar_bound,violations");
    for row in rows {
        for line in row? {
            emit(&line);
        }
    }
    Ok(())
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::CheckRobustness { config, mode } => {
            let (_, model) = load_config(config)?;
            let mut report = preflight(&model);
            if let Some(j) = mode {
                report.modes.retain(|m| m.mode == j);
                if report.modes.is_empty() {
                    return Err(CliError::UnknownMode(j));
                }
            }
            print(&serde_json::to_value(&report).expect("report serializes"));
        }
        Command::BuildMedag { config, horizon } => {
            let (config, _) = load_config(config)?;
            let config = with_overrides(config, horizon, None);
            let model = Model::build(&config)?;
            let trace = run(&model)?;
            let reports = construction_reports(&model, &trace);
            print(&Value::Array(reports));
        }
        Command::VerifyMedag { trace } => {
            let record = RunRecord::load(trace)?;
            let model = Model::build(&record.config)?;
            let reports = construction_reports(&model, &record.trace);
            print(&Value::Array(reports.clone()));
            let n = violation_count(&reports);
            if n > 0 {
                return Err(CliError::Violations(n));
            }
        }
        Command::Simulate { config, horizon, seed, out } => {
            let (config, _) = load_config(config)?;
            simulate_to(&with_overrides(config, horizon, seed), Some(&out))?;
        }
        Command::Scenario { name, out, horizon } => {
            let config = scenarios::by_name(&name).ok_or(CliError::UnknownScenario(name))?;
            simulate_to(&with_overrides(config, horizon, None), out.as_deref())?;
        }
        Command::Motifs { trace, at } => {
            let record = RunRecord::load(trace)?;
            print(&motifs(&record, at)?);
        }
        Command::Sweep { config, seeds, horizon } => {
            let (config, _) = load_config(config)?;
            sweep(&config, seeds, horizon)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
