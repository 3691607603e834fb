//! Built-in two-group sample network and a random instance generator.
//!
//! Node ids: group R1 = 1..=4 senses mode 0, group R2 = 5..=8 senses
//! mode 1, group R3 = 9..=13 senses nothing, and 14 is the spoofer. Links
//! run all-to-all between R1 and R3 and between R2 and R3, from R1 and R2
//! to the spoofer, and from the spoofer to R3. No R1-R2 links exist.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversary::{DualSequence, RandomValued, SpooferPolicy};
use crate::config::{AdversarySpec, EdgeSpec, GraphSpec, NodeSpec, Params, RunConfig, SpooferSpec, SystemSpec};
use crate::graph::{strongly_robust_peel, DirectedGraph};
use crate::observer::GainSpec;
use crate::sim::schedule::UpdateSchedule;
use crate::NodeId;

pub const GROUP_R1: [NodeId; 4] = [1, 2, 3, 4];
pub const GROUP_R2: [NodeId; 4] = [5, 6, 7, 8];
pub const GROUP_R3: [NodeId; 5] = [9, 10, 11, 12, 13];
pub const SPOOFER: NodeId = 14;

fn edge(from: NodeId, to: NodeId, delay: u64) -> EdgeSpec {
    EdgeSpec { from, to, delay: Some(delay) }
}

/// Link list of the sample network with its fixed delays.
pub fn sample_edges() -> Vec<EdgeSpec> {
    let mut edges = Vec::new();
    for &a in &GROUP_R1 {
        for &b in &GROUP_R3 {
            edges.push(edge(a, b, 2));
            edges.push(edge(b, a, 1));
        }
        edges.push(edge(a, SPOOFER, 0));
    }
    for &a in &GROUP_R2 {
        for &b in &GROUP_R3 {
            edges.push(edge(a, b, 3));
            edges.push(edge(b, a, 2));
        }
        edges.push(edge(a, SPOOFER, 0));
    }
    for &b in &GROUP_R3 {
        edges.push(edge(SPOOFER, b, 1));
    }
    edges.sort_by_key(|e| (e.from, e.to));
    edges
}

fn sample_config(mode0_r1: [f64; 4], mode0_r2: f64, mode0_r3: f64, policy: DualSequence) -> RunConfig {
    let periodic = Some(UpdateSchedule::Periodic { period: 2, offset: 0 });
    let gain = Some(GainSpec::Explicit(vec![vec![0.5]]));
    let mut nodes = Vec::new();
    for (i, &id) in GROUP_R1.iter().enumerate() {
        nodes.push(NodeSpec {
            id,
            c: vec![vec![-10.0, 10.0]],
            gain: gain.clone(),
            initial_estimate: Some(vec![mode0_r1[i], 0.0]),
            schedule: periodic,
        });
    }
    for &id in &GROUP_R2 {
        nodes.push(NodeSpec {
            id,
            c: vec![vec![2.0, -1.0]],
            gain: gain.clone(),
            initial_estimate: Some(vec![mode0_r2, 0.0]),
            schedule: periodic,
        });
    }
    for &id in &GROUP_R3 {
        nodes.push(NodeSpec {
            id,
            c: vec![vec![0.0, 0.0]],
            gain: None,
            initial_estimate: Some(vec![mode0_r3, 0.0]),
            schedule: Some(UpdateSchedule::Periodic { period: 1, offset: 0 }),
        });
    }
    RunConfig {
        system: SystemSpec {
            a: vec![vec![0.98, 0.02], vec![-0.04, 1.04]],
            psi: Some(vec![vec![0.1, 1.0], vec![0.2, 1.0]]),
            x0: vec![2.0, 5.0],
        },
        nodes,
        graph: GraphSpec::Static { edges: sample_edges() },
        params: Params::new(1, 1, 2, 3, 200),
        adversary: AdversarySpec {
            spoofers: vec![SpooferSpec { id: SPOOFER, alpha: None, policy: SpooferPolicy::DualSequence(policy) }],
        },
        seed: 0,
        output: None,
    }
}

/// Estimate injection: the spoofer reports 60 as itself at odd steps and
/// 30 as node 1 at even steps, towards R3.
pub fn scenario_s1() -> RunConfig {
    sample_config(
        [100.0, 100.0, 0.0, 0.0],
        0.0,
        0.0,
        DualSequence {
            attacked_mode: 0,
            impersonate: GROUP_R1[0],
            targets: Vec::new(),
            own_value: 60.0,
            spoof_value: 30.0,
            own_delay: 1,
            spoof_delay: 1,
            announce_modes: vec![0, 1],
            block_flags: false,
            block_delay: 0,
            honest_other_modes: true,
        },
    )
}

/// Construction suppression: the spoofer overwrites node 1's flag with an
/// invalid token so R3 never reaches the activation threshold for mode 0,
/// then injects 8 as itself and 9 as node 1.
pub fn scenario_s2() -> RunConfig {
    let mut config = sample_config(
        [10.0, 10.0, 0.0, 0.0],
        6.0,
        7.0,
        DualSequence {
            attacked_mode: 0,
            impersonate: GROUP_R1[0],
            targets: Vec::new(),
            own_value: 8.0,
            spoof_value: 9.0,
            own_delay: 1,
            spoof_delay: 1,
            announce_modes: vec![0, 1],
            block_flags: true,
            block_delay: 2,
            honest_other_modes: true,
        },
    );
    config.params.estimate_before_activation = true;
    config
}

pub fn by_name(name: &str) -> Option<RunConfig> {
    match name {
        "s1" => Some(scenario_s1()),
        "s2" => Some(scenario_s2()),
        _ => None,
    }
}

/// Shape of the generated random instances.
#[derive(Clone, Copy, Debug)]
pub struct InstanceShape {
    pub min_regular: usize,
    pub max_regular: usize,
    /// Required strong robustness w.r.t. every unstable source set.
    pub robustness: usize,
    pub min_sources: usize,
    pub edge_probability: f64,
    pub horizon: u64,
    /// Probability that an instance draws a fresh delay for every packet
    /// instead of one per link.
    pub per_packet_delay_probability: f64,
}

impl Default for InstanceShape {
    fn default() -> Self {
        Self {
            min_regular: 10,
            max_regular: 14,
            robustness: 7,
            min_sources: 6,
            edge_probability: 0.85,
            horizon: 300,
            per_packet_delay_probability: 0.0,
        }
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn random_plant(rng: &mut ChaCha8Rng) -> (Vec<f64>, DMatrix<f64>) {
    let first: f64 = rng.gen_range(1.0..1.04);
    let mut second: f64 = rng.gen_range(1.0..1.04);
    while (second - first).abs() < 0.005 {
        second = rng.gen_range(1.0..1.04);
    }
    let stable: f64 = rng.gen_range(0.5..0.9);
    let lambda = vec![first, second, stable];
    loop {
        let psi = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.0 } + rng.gen_range(-0.3..0.3));
        let sv = psi.clone().svd(false, false).singular_values;
        if sv.min() > 0.3 && sv.max() / sv.min() < 10.0 {
            return (lambda, psi);
        }
    }
}

fn random_schedule(rng: &mut ChaCha8Rng, k_bar: u64) -> UpdateSchedule {
    if rng.gen_bool(0.5) {
        let period = rng.gen_range(1..=k_bar);
        UpdateSchedule::Periodic { period, offset: rng.gen_range(0..period) }
    } else {
        UpdateSchedule::Randomized { probability: rng.gen_range(0.3..=1.0) }
    }
}

fn random_policy(rng: &mut ChaCha8Rng, victims: &[NodeId], impersonate: NodeId) -> SpooferPolicy {
    match rng.gen_range(0..4) {
        0 => SpooferPolicy::Silent,
        1 => SpooferPolicy::RandomValued(RandomValued {
            amplitude: 1.0,
            own_probability: 0.7,
            impersonation_probability: 0.5,
            announce: true,
            forge_flags: false,
        }),
        2 => SpooferPolicy::RandomValued(RandomValued {
            amplitude: 1e6,
            own_probability: 0.9,
            impersonation_probability: 0.9,
            announce: rng.gen_bool(0.5),
            forge_flags: true,
        }),
        _ => SpooferPolicy::DualSequence(DualSequence {
            attacked_mode: rng.gen_range(0..2),
            impersonate,
            targets: victims.to_vec(),
            own_value: rng.gen_range(-100.0..100.0),
            spoof_value: rng.gen_range(-100.0..100.0),
            own_delay: rng.gen_range(0..=1),
            spoof_delay: rng.gen_range(0..=1),
            announce_modes: vec![0, 1],
            block_flags: rng.gen_bool(0.5),
            block_delay: rng.gen_range(0..=1),
            honest_other_modes: rng.gen_bool(0.5),
        }),
    }
}

/// Random three-mode plant (two unstable, one stable) on a dense network
/// with one spoofer, strongly robust w.r.t. both unstable source sets.
pub fn random_instance(seed: u64, shape: &InstanceShape) -> RunConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (f, alpha, k_bar) = (1usize, 1usize, 2u64);
    let tau_bar = rng.gen_range(1..=3u64);
    let n_regular = rng.gen_range(shape.min_regular..=shape.max_regular);
    let regular: Vec<NodeId> = (1..=n_regular as NodeId).collect();
    let spoofer = n_regular as NodeId + 1;

    let (lambda, psi) = random_plant(&mut rng);
    let psi_inv = psi.clone().try_inverse().expect("well conditioned");
    let a = &psi * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(lambda.clone())) * &psi_inv;

    let max_sources = n_regular - 2;
    let mut detects: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_regular];
    for mode in 0..2 {
        let count = rng.gen_range(shape.min_sources..=max_sources.max(shape.min_sources));
        let mut ids: Vec<usize> = (0..n_regular).collect();
        ids.shuffle(&mut rng);
        for &i in &ids[..count] {
            detects[i].insert(mode);
        }
    }
    for d in detects.iter_mut() {
        if rng.gen_bool(0.4) {
            d.insert(2);
        }
    }

    let sources: Vec<BTreeSet<NodeId>> = (0..2)
        .map(|j| {
            let mut s: BTreeSet<NodeId> =
                regular.iter().zip(&detects).filter(|(_, d)| d.contains(&j)).map(|(&id, _)| id).collect();
            s.insert(spoofer);
            s
        })
        .collect();
    let all: Vec<NodeId> = regular.iter().copied().chain([spoofer]).collect();
    let edges = loop {
        let mut g = DirectedGraph::new(all.iter().copied());
        for &from in &all {
            for &to in &regular {
                if from != to && rng.gen_bool(shape.edge_probability) {
                    g.add_edge(from, to).expect("valid edge");
                }
            }
        }
        for &from in &regular {
            if rng.gen_bool(0.5) {
                g.add_edge(from, spoofer).expect("valid edge");
            }
        }
        let robust =
            sources.iter().all(|s| strongly_robust_peel(&g, s, shape.robustness).map(|v| v.robust).unwrap_or(false));
        if robust {
            break g.edges().collect::<Vec<_>>();
        }
    };
    let edge_specs: Vec<EdgeSpec> =
        edges.iter().map(|&(from, to)| edge(from, to, rng.gen_range(0..=tau_bar))).collect();

    let nodes: Vec<NodeSpec> = regular
        .iter()
        .zip(&detects)
        .map(|(&id, d)| {
            let c: Vec<Vec<f64>> = d.iter().map(|&j| psi_inv.row(j).iter().copied().collect()).collect();
            NodeSpec {
                id,
                c,
                gain: Some(GainSpec::PoleTarget(0.5)),
                initial_estimate: Some((0..3).map(|_| rng.gen_range(-10.0..10.0)).collect()),
                schedule: Some(random_schedule(&mut rng, k_bar)),
            }
        })
        .collect();

    let victims: Vec<NodeId> = edges.iter().filter(|e| e.0 == spoofer).map(|e| e.1).collect();
    let impersonate = victims
        .iter()
        .flat_map(|&v| edges.iter().filter(move |e| e.1 == v && e.0 != spoofer).map(|e| e.0))
        .next()
        .unwrap_or(regular[0]);
    let policy = random_policy(&mut rng, &victims, impersonate);

    let mut params = Params::new(f, alpha, k_bar, tau_bar, shape.horizon);
    params.random_delays = rng.gen_bool(shape.per_packet_delay_probability);
    RunConfig {
        system: SystemSpec {
            a: to_rows(&a),
            psi: Some(to_rows(&psi)),
            x0: (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect(),
        },
        nodes,
        graph: GraphSpec::Static { edges: edge_specs },
        params,
        adversary: AdversarySpec { spoofers: vec![SpooferSpec { id: spoofer, alpha: None, policy }] },
        seed,
        output: None,
    }
}
