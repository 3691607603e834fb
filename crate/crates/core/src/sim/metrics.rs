//! Summary statistics over a finished trace.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::medag::{assign_layers, kbar_bound};
use crate::sim::trace::SimTrace;
use crate::NodeId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: usize,
    pub eigenvalue: f64,
    pub final_max_error: Option<f64>,
    pub first_below_tolerance: Option<u64>,
    /// Least-squares slope of `ln(max error)` per step after construction.
    pub decay_rate: Option<f64>,
    pub termination_step: Option<u64>,
    pub longest_path: Option<usize>,
    pub kbar_bound: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seed: u64,
    pub horizon: u64,
    pub tolerance: f64,
    pub modes: Vec<ModeSummary>,
}

/// Errors of exactly zero are floored at this value before taking logs.
pub const LOG_FLOOR: f64 = 1e-300;

/// Least-squares slope of `ln |e|` against the step index.
pub fn log_error_slope(errors: &[f64]) -> Option<f64> {
    if errors.len() < 2 {
        return None;
    }
    let m = errors.len() as f64;
    let ys: Vec<f64> = errors.iter().map(|e| e.abs().max(LOG_FLOOR).ln()).collect();
    let mean_x = (m - 1.0) / 2.0;
    let mean_y = ys.iter().sum::<f64>() / m;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mean_x;
        num += dx * (y - mean_y);
        den += dx * dx;
    }
    Some(num / den)
}

/// Errors at or below this fraction of `max(1, |z|)` are roundoff.
pub const NUMERICAL_FLOOR_REL: f64 = 1e-9;

/// `env[k] = max_{m >= k} |e[m]|`, the smallest non-increasing bound.
pub fn tail_envelope(errors: &[f64]) -> Vec<f64> {
    let mut env = vec![0.0; errors.len()];
    let mut running = 0.0f64;
    for (k, e) in errors.iter().enumerate().rev() {
        running = running.max(e.abs());
        env[k] = running;
    }
    env
}

/// Log slope of the tail envelope of the errors above the numerical floor
/// (errors within `floor_rel * max(1, |z|)` of their own step count as
/// zero). The fit runs up to and including the first step where the
/// envelope vanishes, with that point clamped to the floor. `None` when
/// the envelope starts at zero, i.e. the error is already roundoff.
pub fn decay_slope(errors: &[f64], truth: &[f64], floor_rel: f64) -> Option<f64> {
    let floor: Vec<f64> = truth.iter().map(|z| floor_rel * z.abs().max(1.0)).collect();
    let above: Vec<f64> = errors.iter().zip(&floor).map(|(e, f)| if e.abs() <= *f { 0.0 } else { e.abs() }).collect();
    let mut env = tail_envelope(&above);
    let end = match env.iter().position(|&e| e == 0.0) {
        Some(k) => {
            env[k] = floor[k];
            k + 1
        }
        None => env.len(),
    };
    log_error_slope(&env[..end])
}

/// Layer depth of the recorded construction for `mode`, if it terminated.
pub fn longest_path(trace: &SimTrace, mode: usize) -> Option<usize> {
    let c = trace.construction(mode)?;
    if !c.terminated() {
        return None;
    }
    let regular: BTreeSet<NodeId> = trace.regular.iter().copied().collect();
    let sources: BTreeSet<NodeId> = c.sources.intersection(&regular).copied().collect();
    let parents: BTreeMap<NodeId, BTreeSet<NodeId>> =
        c.parents.iter().filter(|(n, _)| regular.contains(n)).map(|(n, p)| (*n, p.clone())).collect();
    assign_layers(&parents, &sources, &regular).ok().map(|l| l.longest_path)
}

pub fn snapshot_metrics(trace: &SimTrace, tolerance: f64) -> RunSummary {
    let steps = trace.estimates.len();
    let p = trace.params;
    let modes = (0..trace.eigenvalues.len())
        .map(|j| {
            let series: Vec<f64> = (0..steps).map(|k| trace.max_error(k, j)).collect();
            let truth: Vec<f64> = trace.true_z.iter().map(|z| z[j]).collect();
            let termination_step = trace.construction(j).and_then(|c| c.termination_step());
            let l_bar = longest_path(trace, j);
            let from = if trace.medag_modes.contains(&j) { termination_step.map(|t| t as usize) } else { Some(0) };
            ModeSummary {
                mode: j,
                eigenvalue: trace.eigenvalues[j],
                final_max_error: series.last().copied(),
                first_below_tolerance: series.iter().position(|&e| e < tolerance).map(|k| k as u64),
                decay_rate: from
                    .filter(|&f| f < steps)
                    .and_then(|f| decay_slope(&series[f..], &truth[f..], NUMERICAL_FLOOR_REL)),
                termination_step,
                longest_path: l_bar,
                kbar_bound: l_bar.map(|l| kbar_bound(l as u64, p.k_bar, p.tau_bar, p.beta as u64)),
            }
        })
        .collect();
    RunSummary { config_hash: trace.config_hash.clone(), seed: trace.seed, horizon: trace.horizon, tolerance, modes }
}
