use std::collections::{BTreeMap, BTreeSet};

use spoofres_core::adversary::SpooferPolicy;
use spoofres_core::config::{GraphSpec, Model, RunConfig};
use spoofres_core::medag::{enumerate_motifs, kbar_bound, verify_srmedag};
use spoofres_core::scenarios::{random_instance, scenario_s1, scenario_s2, InstanceShape};
use spoofres_core::sim::metrics::{decay_slope, longest_path, NUMERICAL_FLOOR_REL};
use spoofres_core::sim::trace::TraceEvent;
use spoofres_core::sim::{run, SimTrace};
use spoofres_core::NodeId;

fn shape(horizon: u64) -> InstanceShape {
    InstanceShape { horizon, ..InstanceShape::default() }
}

fn simulate(config: &RunConfig) -> SimTrace {
    run(&Model::build(config).unwrap()).unwrap()
}

/// The same network with the spoofer and all its links removed.
fn without_spoofer(config: &RunConfig) -> RunConfig {
    let mut out = config.clone();
    let gone: BTreeSet<NodeId> = out.adversary.spoofers.drain(..).map(|s| s.id).collect();
    if let GraphSpec::Static { edges } = &mut out.graph {
        edges.retain(|e| !gone.contains(&e.from) && !gone.contains(&e.to));
    }
    out
}

#[test]
fn replay_is_bit_identical() {
    for config in [scenario_s1(), scenario_s2(), random_instance(3, &shape(150))] {
        let a = simulate(&config);
        let b = simulate(&config);
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}

#[test]
fn delays_gaps_and_staleness_stay_bounded() {
    let mut configs = vec![scenario_s1(), scenario_s2()];
    configs.extend((0..15).map(|s| random_instance(s, &shape(120))));
    let mut per_packet = random_instance(99, &shape(120));
    per_packet.params.random_delays = true;
    configs.push(per_packet);
    for config in configs {
        let trace = simulate(&config);
        let p = trace.params;
        assert!(trace.max_delay <= p.tau_bar);
        assert!(trace.max_staleness <= p.k_bar - 1 + p.tau_bar);
        for im in &trace.impersonations {
            assert!(im.arrival_step - im.send_step <= p.tau_bar);
        }
        for (node, steps) in &trace.awake {
            let mut last: i64 = -1;
            for &k in steps {
                assert!(k as i64 - last <= p.k_bar as i64, "node {node} idle too long before step {k}");
                last = k as i64;
            }
            assert!(trace.horizon as i64 - last <= p.k_bar as i64, "node {node} idle at the end");
        }
    }
}

#[test]
fn silent_spoofer_matches_removed_spoofer() {
    for seed in 0..8 {
        let mut config = random_instance(seed, &shape(120));
        config.adversary.spoofers[0].policy = SpooferPolicy::Silent;
        let with = simulate(&config);
        let without = simulate(&without_spoofer(&config));
        assert_eq!(with.estimates, without.estimates, "seed {seed}");
        assert_eq!(with.events, without.events, "seed {seed}");
        for (a, b) in with.constructions.iter().zip(&without.constructions) {
            assert_eq!(a.parents, b.parents);
            assert_eq!(a.activated_at, b.activated_at);
        }
    }
}

#[test]
fn perfect_initial_estimates_stay_exact() {
    for seed in 0..5 {
        let mut config = without_spoofer(&random_instance(seed, &shape(100)));
        let z0: Vec<f64> = Model::build(&config).unwrap().diag.z0.iter().copied().collect();
        for n in &mut config.nodes {
            n.initial_estimate = Some(z0.clone());
        }
        let trace = simulate(&config);
        for (k, z) in trace.true_z.iter().enumerate() {
            for (j, zj) in z.iter().enumerate() {
                let err = trace.max_error(k, j);
                assert!(err <= 1e-9 * zj.abs().max(1.0), "seed {seed} step {k} mode {j}: {err}");
            }
        }
    }
}

#[test]
fn adversary_free_followers_decay() {
    for seed in 0..10 {
        let config = without_spoofer(&random_instance(seed, &shape(300)));
        let trace = simulate(&config);
        for c in &trace.constructions {
            let start = c.termination_step().expect("terminates") as usize;
            for &n in c.parents.keys() {
                let errs = &trace.error_series(n, c.mode)[start..];
                let truth: Vec<f64> = trace.true_z[start..].iter().map(|z| z[c.mode]).collect();
                if let Some(slope) = decay_slope(errs, &truth, NUMERICAL_FLOOR_REL) {
                    assert!(slope < 0.0, "seed {seed} node {n} mode {}: slope {slope}", c.mode);
                }
            }
            assert!(trace.max_error(trace.estimates.len() - 1, c.mode) < 1e-4);
        }
    }
}

/// Per spoofer: identities emitted at each step.
fn emitted(trace: &SimTrace) -> BTreeMap<NodeId, BTreeMap<u64, BTreeSet<NodeId>>> {
    let mut out: BTreeMap<NodeId, BTreeMap<u64, BTreeSet<NodeId>>> = BTreeMap::new();
    for e in &trace.events {
        if let TraceEvent::Emission { step, spoofer, identity, .. } = e {
            out.entry(*spoofer).or_default().entry(*step).or_default().insert(*identity);
        }
    }
    out
}

#[test]
fn emissions_respect_capacity_in_every_window() {
    let mut configs = vec![scenario_s1(), scenario_s2()];
    configs.extend((0..30).map(|s| random_instance(s, &shape(100))));
    for config in configs {
        let alpha = config.params.alpha;
        let trace = simulate(&config);
        let (k_bar, beta) = (trace.params.k_bar, trace.params.beta);
        for (spoofer, steps) in emitted(&trace) {
            for (&t, ids) in &steps {
                assert!(ids.len() <= alpha);
                let start = (t + 1).saturating_sub(k_bar);
                let window: BTreeSet<NodeId> =
                    steps.range(start..=t).flat_map(|(_, ids)| ids.iter().copied()).filter(|&i| i != spoofer).collect();
                assert!(window.len() <= beta, "spoofer {spoofer} window ending {t}: {window:?}");
            }
        }
    }
}

#[test]
fn construction_terminates_verifies_and_has_motifs() {
    for seed in 0..20 {
        let config = random_instance(seed, &shape(150));
        let model = Model::build(&config).unwrap();
        let trace = run(&model).unwrap();
        let p = trace.params;
        let g = model.graph.at(0);
        for c in &trace.constructions {
            let report = verify_srmedag(g, c, &model.regular, p.f, p.beta);
            assert!(report.terminated, "seed {seed} mode {}", c.mode);
            assert!(report.violations.is_empty(), "seed {seed}: {:?}", report.violations);
            let l_bar = longest_path(&trace, c.mode).unwrap() as u64;
            assert_eq!(l_bar as usize, report.longest_path);
            let bound = kbar_bound(l_bar, p.k_bar, p.tau_bar, p.beta as u64);
            assert!(report.termination_step.unwrap() <= bound, "seed {seed}");
            for (&n, parents) in c.parents.iter().filter(|(n, _)| !c.sources.contains(n)) {
                let at = c.activated_at[&n].unwrap();
                let impersonated = trace.impersonated_towards(n, at);
                let spoofers: BTreeSet<NodeId> = model.spoofers.clone();
                let motifs = enumerate_motifs(n, c.mode, parents, &impersonated, &spoofers, p.f, p.beta).unwrap();
                assert!(motifs.len() >= (p.beta + 1) * p.f);
            }
        }
    }
}

#[test]
fn parents_freeze_and_activation_happens_once() {
    for config in [scenario_s1(), random_instance(5, &shape(100))] {
        let trace = simulate(&config);
        let mut seen: BTreeMap<(NodeId, usize), BTreeSet<NodeId>> = BTreeMap::new();
        for e in &trace.events {
            if let TraceEvent::Activated { node, mode, parents, step } = e {
                assert!(seen.insert((*node, *mode), parents.clone()).is_none(), "node {node} activated twice");
                let c = trace.construction(*mode).unwrap();
                assert_eq!(&c.parents[node], parents);
                assert_eq!(c.activated_at[node], Some(*step));
            }
        }
    }
}
