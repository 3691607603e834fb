//! Run configuration, validation and topology pre-flight.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adversary::{beta_from_capacity, SpooferPolicy};
use crate::filter::beta_prime;
use crate::graph::{max_joint_robustness, max_strong_robustness, DirectedGraph, GraphError, TimeVaryingGraph};
use crate::lti::{
    detectable_modes, diagonalize, source_sets, DiagonalizedSystem, LtiSystem, LtiTolerances, ModeSplit,
    ObservationModel,
};
use crate::observer::{design_gain, GainSpec};
use crate::sim::schedule::UpdateSchedule;
use crate::NodeId;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config at `{path}`: {message}")]
    Validation { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation { path: path.into(), message: message.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub a: Vec<Vec<f64>>,
    #[serde(default)]
    pub psi: Option<Vec<Vec<f64>>>,
    pub x0: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    /// Measurement matrix rows; empty means no local sensing.
    #[serde(default)]
    pub c: Vec<Vec<f64>>,
    #[serde(default)]
    pub gain: Option<GainSpec>,
    /// Initial modal estimate, one entry per mode (default zeros).
    #[serde(default)]
    pub initial_estimate: Option<Vec<f64>>,
    #[serde(default)]
    pub schedule: Option<UpdateSchedule>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub from: NodeId,
    pub to: NodeId,
    /// Fixed link delay; drawn from `0..=tau_bar` with the run seed when absent.
    #[serde(default)]
    pub delay: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalSpec {
    pub start: u64,
    pub edges: Vec<EdgeSpec>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphSpec {
    Static { edges: Vec<EdgeSpec> },
    TimeVarying { mu_bar: u64, intervals: Vec<IntervalSpec> },
}

fn default_true() -> bool {
    true
}

fn default_error_tol() -> f64 {
    1e-6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub f: usize,
    pub alpha: usize,
    pub k_bar: u64,
    pub tau_bar: u64,
    pub horizon: u64,
    #[serde(default)]
    pub trim_override: Option<usize>,
    #[serde(default)]
    pub tolerances: LtiTolerances,
    /// Advance stale neighbour values by the mode eigenvalue.
    #[serde(default = "default_true")]
    pub delay_compensation: bool,
    /// A parent with no estimate slot yet contributes the receiver's own
    /// current estimate instead of nothing.
    #[serde(default = "default_true")]
    pub fill_missing: bool,
    /// Followers filter over the identities counted so far before activating.
    #[serde(default)]
    pub estimate_before_activation: bool,
    /// Run the construction and filtering for stable modes too.
    #[serde(default)]
    pub medag_all_modes: bool,
    /// Last step at which active nodes rebroadcast their flag.
    #[serde(default)]
    pub medag_horizon: Option<u64>,
    /// Draw each regular packet's delay independently (FIFO per link).
    #[serde(default)]
    pub random_delays: bool,
    /// Use the randomized-update budget when every schedule is randomized.
    #[serde(default)]
    pub randomized_budget: bool,
    #[serde(default)]
    pub default_schedule: Option<UpdateSchedule>,
    /// Threshold for the "first step below tolerance" summary metric.
    #[serde(default = "default_error_tol")]
    pub error_tolerance: f64,
}

impl Params {
    pub fn new(f: usize, alpha: usize, k_bar: u64, tau_bar: u64, horizon: u64) -> Self {
        Self {
            f,
            alpha,
            k_bar,
            tau_bar,
            horizon,
            trim_override: None,
            tolerances: LtiTolerances::default(),
            delay_compensation: true,
            fill_missing: true,
            estimate_before_activation: false,
            medag_all_modes: false,
            medag_horizon: None,
            random_delays: false,
            randomized_budget: false,
            default_schedule: None,
            error_tolerance: default_error_tol(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpooferSpec {
    pub id: NodeId,
    /// Defaults to `params.alpha`.
    #[serde(default)]
    pub alpha: Option<usize>,
    #[serde(default)]
    pub policy: SpooferPolicy,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    #[serde(default)]
    pub spoofers: Vec<SpooferSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub nodes: Vec<NodeSpec>,
    pub graph: GraphSpec,
    pub params: Params,
    #[serde(default)]
    pub adversary: AdversarySpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<String>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn graph_is_static(&self) -> bool {
        matches!(self.graph, GraphSpec::Static { .. })
    }

    /// SHA-256 of the compact JSON encoding.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Reads, parses and validates a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<(RunConfig, Model), ConfigError> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    let config = RunConfig::from_json(&text)?;
    let model = Model::build(&config)?;
    Ok((config, model))
}

/// A validated configuration with every derived quantity resolved.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: RunConfig,
    pub system: LtiSystem,
    pub diag: DiagonalizedSystem,
    pub regular: BTreeSet<NodeId>,
    pub spoofers: BTreeSet<NodeId>,
    pub observations: BTreeMap<NodeId, ObservationModel>,
    pub splits: BTreeMap<NodeId, ModeSplit>,
    /// Nodes able to detect each mode; spoofers know everything and are
    /// included.
    pub sources: BTreeMap<usize, BTreeSet<NodeId>>,
    pub graph: TimeVaryingGraph,
    pub union_graph: DirectedGraph,
    pub mu_bar: u64,
    pub delays: BTreeMap<(NodeId, NodeId), u64>,
    pub beta: usize,
    pub beta_prime: usize,
    /// Budget used for the activation threshold and trimming.
    pub effective_beta: usize,
    /// Modes handled by construction and filtering.
    pub medag_modes: Vec<usize>,
    pub schedules: BTreeMap<NodeId, UpdateSchedule>,
    pub gains: BTreeMap<NodeId, GainSpec>,
    pub initial: BTreeMap<NodeId, Vec<f64>>,
    pub config_hash: String,
}

fn matrix(rows: &[Vec<f64>], cols: usize, path: &str) -> Result<DMatrix<f64>, ConfigError> {
    if let Some((i, _)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(invalid(format!("{path}[{i}]"), format!("expected {cols} columns")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid(path, "non-finite entry"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

impl Model {
    pub fn build(config: &RunConfig) -> Result<Model, ConfigError> {
        let p = &config.params;
        if p.k_bar == 0 {
            return Err(invalid("params.k_bar", "must be at least 1"));
        }
        if p.alpha == 0 {
            return Err(invalid("params.alpha", "must be at least 1"));
        }
        if p.error_tolerance.is_nan() || p.error_tolerance <= 0.0 {
            return Err(invalid("params.error_tolerance", "must be positive"));
        }
        if p.medag_horizon.is_some_and(|h| h > p.horizon) {
            return Err(invalid("params.medag_horizon", "exceeds the run horizon"));
        }

        let n = config.system.a.len();
        if n == 0 {
            return Err(invalid("system.a", "empty matrix"));
        }
        let a = matrix(&config.system.a, n, "system.a")?;
        if config.system.x0.len() != n {
            return Err(invalid("system.x0", format!("expected {n} entries")));
        }
        let system = LtiSystem::new(a, DVector::from_column_slice(&config.system.x0))
            .map_err(|e| invalid("system", e.to_string()))?;
        let psi = match &config.system.psi {
            Some(rows) => {
                if rows.len() != n {
                    return Err(invalid("system.psi", format!("expected {n} rows")));
                }
                Some(matrix(rows, n, "system.psi")?)
            }
            None => None,
        };
        let diag = diagonalize(&system, psi.as_ref(), &p.tolerances).map_err(|e| invalid("system", e.to_string()))?;

        let mut regular = BTreeSet::new();
        for (i, node) in config.nodes.iter().enumerate() {
            if !regular.insert(node.id) {
                return Err(invalid(format!("nodes[{i}].id"), format!("duplicate id {}", node.id)));
            }
        }
        let mut spoofers = BTreeSet::new();
        for (i, s) in config.adversary.spoofers.iter().enumerate() {
            let path = format!("adversary.spoofers[{i}]");
            if regular.contains(&s.id) || !spoofers.insert(s.id) {
                return Err(invalid(format!("{path}.id"), format!("duplicate id {}", s.id)));
            }
            if s.alpha == Some(0) {
                return Err(invalid(format!("{path}.alpha"), "must be at least 1"));
            }
        }
        if regular.is_empty() {
            return Err(invalid("nodes", "no regular nodes"));
        }

        let mut observations = BTreeMap::new();
        let mut splits = BTreeMap::new();
        let mut schedules = BTreeMap::new();
        let mut gains = BTreeMap::new();
        let mut initial = BTreeMap::new();
        for (i, node) in config.nodes.iter().enumerate() {
            let path = format!("nodes[{i}]");
            let c = matrix(&node.c, n, &format!("{path}.c"))?;
            let obs =
                ObservationModel::new(node.id, c, &diag).map_err(|e| invalid(format!("{path}.c"), e.to_string()))?;
            let split = detectable_modes(&obs, p.tolerances.pbh_tol);
            let lambda: Vec<f64> = split.detectable.iter().map(|&j| diag.eigenvalues[j]).collect();
            let gain = node.gain.clone().unwrap_or_default();
            if !split.detectable.is_empty() {
                design_gain(&lambda, &obs.detectable_block(&split.detectable), &gain)
                    .map_err(|e| invalid(format!("{path}.gain"), e.to_string()))?;
            }
            let init = node.initial_estimate.clone().unwrap_or_else(|| vec![0.0; n]);
            if init.len() != n || init.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("{path}.initial_estimate"), format!("expected {n} finite entries")));
            }
            let schedule = node.schedule.or(p.default_schedule).unwrap_or_default();
            schedule.validate(p.k_bar).map_err(|m| invalid(format!("{path}.schedule"), m))?;
            observations.insert(node.id, obs);
            splits.insert(node.id, split);
            schedules.insert(node.id, schedule);
            gains.insert(node.id, gain);
            initial.insert(node.id, init);
        }

        let all_nodes: BTreeSet<NodeId> = regular.union(&spoofers).copied().collect();
        let mut delays: BTreeMap<(NodeId, NodeId), u64> = BTreeMap::new();
        let mut delay_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xD1E1_A7D1_E1A7);
        let mut build_graph = |edges: &[EdgeSpec], path: &str| -> Result<DirectedGraph, ConfigError> {
            let mut g = DirectedGraph::new(all_nodes.iter().copied());
            for (i, e) in edges.iter().enumerate() {
                let epath = format!("{path}[{i}]");
                if g.has_edge(e.from, e.to) {
                    return Err(invalid(epath, format!("duplicate edge {} -> {}", e.from, e.to)));
                }
                g.add_edge(e.from, e.to).map_err(|err| invalid(epath.clone(), err.to_string()))?;
                if let Some(d) = e.delay {
                    if d > p.tau_bar {
                        return Err(invalid(
                            format!("{epath}.delay"),
                            format!("delay {d} exceeds tau_bar {}", p.tau_bar),
                        ));
                    }
                    match delays.get(&(e.from, e.to)) {
                        Some(&old) if old != d => {
                            return Err(invalid(format!("{epath}.delay"), "conflicts with an earlier interval"))
                        }
                        _ => {
                            delays.insert((e.from, e.to), d);
                        }
                    }
                }
            }
            Ok(g)
        };
        let (graph, mu_bar, spec_edges): (TimeVaryingGraph, u64, Vec<&EdgeSpec>) = match &config.graph {
            GraphSpec::Static { edges } => {
                (TimeVaryingGraph::constant(build_graph(edges, "graph.static.edges")?), 0, edges.iter().collect())
            }
            GraphSpec::TimeVarying { mu_bar, intervals } => {
                if *mu_bar > p.k_bar {
                    return Err(invalid(
                        "graph.time_varying.mu_bar",
                        format!("window {mu_bar} exceeds k_bar {} (requires mu_bar <= k_bar)", p.k_bar),
                    ));
                }
                if intervals.is_empty() {
                    return Err(invalid("graph.time_varying.intervals", "no intervals"));
                }
                let mut list = Vec::new();
                for (i, iv) in intervals.iter().enumerate() {
                    list.push((iv.start, build_graph(&iv.edges, &format!("graph.time_varying.intervals[{i}].edges"))?));
                }
                let tv = TimeVaryingGraph::new(list)
                    .map_err(|e: GraphError| invalid("graph.time_varying.intervals", e.to_string()))?;
                (tv, *mu_bar, intervals.iter().flat_map(|iv| iv.edges.iter()).collect())
            }
        };
        for e in spec_edges {
            if e.delay.is_none() && !delays.contains_key(&(e.from, e.to)) {
                delays.insert((e.from, e.to), delay_rng.gen_range(0..=p.tau_bar));
            }
        }
        let union_graph = graph.union_all();

        for &i in &regular {
            let count = union_graph.in_neighbors(i).iter().filter(|j| spoofers.contains(j)).count();
            if count > p.f {
                return Err(invalid(
                    "adversary.spoofers",
                    format!("node {i} has {count} spoofer in-neighbours, more than f = {}", p.f),
                ));
            }
        }

        for (i, s) in config.adversary.spoofers.iter().enumerate() {
            check_policy(&s.policy, &all_nodes, n, p.tau_bar, &format!("adversary.spoofers[{i}].policy"))?;
        }

        let beta = beta_from_capacity(p.alpha, p.k_bar as usize);
        let beta_p = beta_prime(beta, p.k_bar as usize);
        let all_randomized = schedules.values().all(UpdateSchedule::is_randomized);
        let effective_beta = if p.randomized_budget && all_randomized { beta_p } else { beta };

        let all_modes: Vec<usize> = (0..n).collect();
        let mut sources = source_sets(&splits, &all_modes);
        for s in sources.values_mut() {
            s.extend(spoofers.iter().copied());
        }
        let medag_modes = if p.medag_all_modes { all_modes } else { diag.unstable_modes.clone() };

        Ok(Model {
            config: config.clone(),
            system,
            diag,
            regular,
            spoofers,
            observations,
            splits,
            sources,
            graph,
            union_graph,
            mu_bar,
            delays,
            beta,
            beta_prime: beta_p,
            effective_beta,
            medag_modes,
            schedules,
            gains,
            initial,
            config_hash: config.hash(),
        })
    }

    pub fn params(&self) -> &Params {
        &self.config.params
    }

    pub fn regular_sources(&self, mode: usize) -> BTreeSet<NodeId> {
        self.sources[&mode].intersection(&self.regular).copied().collect()
    }

    pub fn spoofer_alpha(&self, id: NodeId) -> usize {
        self.config
            .adversary
            .spoofers
            .iter()
            .find(|s| s.id == id)
            .and_then(|s| s.alpha)
            .unwrap_or(self.config.params.alpha)
    }
}

fn check_policy(
    policy: &SpooferPolicy,
    nodes: &BTreeSet<NodeId>,
    n_modes: usize,
    tau_bar: u64,
    path: &str,
) -> Result<(), ConfigError> {
    let mode_ok = |m: usize| m < n_modes;
    let delay_ok = |d: u64| d <= tau_bar;
    match policy {
        SpooferPolicy::Silent => {}
        SpooferPolicy::Scripted { emissions } => {
            for (i, e) in emissions.iter().enumerate() {
                let ep = format!("{path}.emissions[{i}]");
                if !nodes.contains(&e.identity) || e.targets.iter().any(|t| !nodes.contains(t)) {
                    return Err(invalid(ep, "unknown node"));
                }
                if !mode_ok(e.packet.mode()) {
                    return Err(invalid(ep, "mode out of range"));
                }
                if !delay_ok(e.delay) {
                    return Err(invalid(format!("{ep}.delay"), "exceeds tau_bar"));
                }
            }
        }
        SpooferPolicy::DualSequence(d) => {
            if !nodes.contains(&d.impersonate) || d.targets.iter().any(|t| !nodes.contains(t)) {
                return Err(invalid(path, "unknown node"));
            }
            if !mode_ok(d.attacked_mode) || d.announce_modes.iter().any(|&m| !mode_ok(m)) {
                return Err(invalid(path, "mode out of range"));
            }
            if ![d.own_delay, d.spoof_delay, d.block_delay].into_iter().all(delay_ok) {
                return Err(invalid(path, "delay exceeds tau_bar"));
            }
        }
        SpooferPolicy::RandomValued(r) => {
            let prob = |x: f64| (0.0..=1.0).contains(&x);
            if !prob(r.own_probability)
                || !prob(r.impersonation_probability)
                || r.amplitude.is_nan()
                || r.amplitude < 0.0
            {
                return Err(invalid(path, "probabilities must lie in [0, 1] and amplitude be non-negative"));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdCheck {
    pub name: String,
    pub required: usize,
    pub met: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModePreflight {
    pub mode: usize,
    pub eigenvalue: f64,
    pub sources: Vec<NodeId>,
    /// No regular node can detect this mode.
    pub no_regular_source: bool,
    pub r_star: usize,
    pub checks: Vec<ThresholdCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreflightReport {
    pub f: usize,
    pub beta: usize,
    pub beta_prime: usize,
    pub window_within_kbar: Option<bool>,
    pub modes: Vec<ModePreflight>,
}

/// Robustness of the topology against the sufficiency thresholds, per mode.
pub fn preflight(model: &Model) -> PreflightReport {
    let p = model.params();
    let (f, beta, bp) = (p.f, model.beta, model.beta_prime);
    let time_varying = matches!(model.config.graph, GraphSpec::TimeVarying { .. });
    let modes = model
        .medag_modes
        .iter()
        .map(|&j| {
            let s = &model.sources[&j];
            let r_star = if s.is_empty() {
                0
            } else if time_varying {
                max_joint_robustness(&model.graph, s, model.mu_bar, p.horizon.max(model.mu_bar)).unwrap_or(0)
            } else {
                max_strong_robustness(model.graph.at(0), s).unwrap_or(0)
            };
            let check = |name: &str, required: usize| ThresholdCheck {
                name: name.to_string(),
                required,
                met: r_star >= required,
            };
            ModePreflight {
                mode: j,
                eigenvalue: model.diag.eigenvalues[j],
                sources: s.iter().copied().collect(),
                no_regular_source: s.is_disjoint(&model.regular),
                r_star,
                checks: vec![
                    check("full", 3 * (beta + 1) * f + 1),
                    check("no_construction_impersonation", 2 * (beta + 1) * f + 1),
                    check("randomized", 3 * (bp + 1) * f + 1),
                ],
            }
        })
        .collect();
    PreflightReport {
        f,
        beta,
        beta_prime: bp,
        window_within_kbar: time_varying.then_some(model.mu_bar <= p.k_bar),
        modes,
    }
}
