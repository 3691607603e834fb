//! CSV and JSON output of a finished run.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::sim::metrics::RunSummary;
use crate::sim::trace::{SimTrace, TraceEvent};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Everything the offline `verify-medag` and `motifs` commands need.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub trace: SimTrace,
}

impl RunRecord {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExportError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ExportError::Io { path: path.into(), source })?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub const ESTIMATES_FILE: &str = "estimates.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const RUN_FILE: &str = "run.json";

fn open(dir: &Path, name: &str, trace: &SimTrace) -> Result<csv::Writer<BufWriter<File>>, ExportError> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|source| ExportError::Io { path: path.clone(), source })?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# config_hash={} seed={}", trace.config_hash, trace.seed)
        .map_err(|source| ExportError::Io { path, source })?;
    Ok(csv::Writer::from_writer(out))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Row layout of the events file: step, event, node, mode, identity, detail.
fn event_row(e: &TraceEvent) -> [String; 6] {
    let s = |x: &dyn ToString| x.to_string();
    match e {
        TraceEvent::Activated { step, node, mode, parents } => {
            [s(step), "activated".into(), s(node), s(mode), String::new(), join(parents)]
        }
        TraceEvent::Detection { step, node, mode, identity } => {
            [s(step), "detection".into(), s(node), s(mode), s(identity), String::new()]
        }
        TraceEvent::Hold { step, node, mode } => {
            [s(step), "hold".into(), s(node), s(mode), String::new(), String::new()]
        }
        TraceEvent::Resume { step, node, mode } => {
            [s(step), "resume".into(), s(node), s(mode), String::new(), String::new()]
        }
        TraceEvent::Emission { step, spoofer, identity, targets, packet, delay } => [
            s(step),
            "emission".into(),
            s(spoofer),
            s(&packet.mode()),
            s(identity),
            format!(
                "{} targets={} delay={delay}",
                serde_json::to_string(packet).expect("packet serializes"),
                join(targets)
            ),
        ],
        TraceEvent::Dropped { step, receiver, claimed, origin, reason } => [
            s(step),
            "dropped".into(),
            s(receiver),
            String::new(),
            s(claimed),
            format!(
                "origin={origin} reason={}",
                serde_json::to_value(reason).expect("reason serializes").as_str().unwrap_or("")
            ),
        ],
    }
}

/// Writes the estimates, events and summary CSV files plus `run.json`
/// into `dir` (created if missing).
pub fn export_csv(
    config: &RunConfig,
    trace: &SimTrace,
    summary: &RunSummary,
    dir: impl AsRef<Path>,
) -> Result<(), ExportError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| ExportError::Io { path: dir.into(), source })?;

    let mut w = open(dir, ESTIMATES_FILE, trace)?;
    w.write_record(["step", "node", "mode", "estimate_z", "true_z", "error"])?;
    for (k, row) in trace.estimates.iter().enumerate() {
        for (i, &node) in trace.regular.iter().enumerate() {
            for (j, &est) in row[i].iter().enumerate() {
                let truth = trace.true_z[k][j];
                w.write_record([
                    k.to_string(),
                    node.to_string(),
                    j.to_string(),
                    est.to_string(),
                    truth.to_string(),
                    (est - truth).to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|source| ExportError::Io { path: dir.join(ESTIMATES_FILE), source })?;

    let mut w = open(dir, EVENTS_FILE, trace)?;
    w.write_record(["step", "event", "node", "mode", "identity", "detail"])?;
    for e in &trace.events {
        w.write_record(event_row(e))?;
    }
    w.flush().map_err(|source| ExportError::Io { path: dir.join(EVENTS_FILE), source })?;

    let mut w = open(dir, SUMMARY_FILE, trace)?;
    w.write_record([
        "mode",
        "eigenvalue",
        "final_max_error",
        "first_below_tolerance",
        "decay_rate",
        "termination_step",
        "longest_path",
        "kbar_bound",
    ])?;
    // no steps, no metrics: the summary stays header-only like the others
    let modes = if trace.estimates.is_empty() { &[][..] } else { &summary.modes[..] };
    for m in modes {
        w.write_record([
            m.mode.to_string(),
            m.eigenvalue.to_string(),
            opt(m.final_max_error),
            opt(m.first_below_tolerance),
            opt(m.decay_rate),
            opt(m.termination_step),
            opt(m.longest_path),
            opt(m.kbar_bound),
        ])?;
    }
    w.flush().map_err(|source| ExportError::Io { path: dir.join(SUMMARY_FILE), source })?;

    let record = RunRecord { config: config.clone(), trace: trace.clone() };
    let path = dir.join(RUN_FILE);
    let text = serde_json::to_string(&record)?;
    std::fs::write(&path, text).map_err(|source| ExportError::Io { path, source })?;
    Ok(())
}
