use std::collections::BTreeSet;

use spoofres_core::config::{preflight, Model};
use spoofres_core::graph::max_strong_robustness;
use spoofres_core::scenarios::{scenario_s1, scenario_s2, GROUP_R1, GROUP_R2, GROUP_R3, SPOOFER};
use spoofres_core::sim::run;

#[test]
fn sample_network_modal_form() {
    let model = Model::build(&scenario_s1()).unwrap();
    let a_bar = model.diag.a_bar();
    assert!((a_bar[(0, 0)] - 1.02).abs() < 1e-12);
    assert!((a_bar[(1, 1)] - 1.0).abs() < 1e-12);
    assert!(a_bar[(0, 1)].abs() < 1e-12 && a_bar[(1, 0)].abs() < 1e-12);
    assert!((model.diag.z0[0] - 30.0).abs() < 1e-12);
    assert!((model.diag.z0[1] + 1.0).abs() < 1e-12);
    assert_eq!(model.diag.unstable_modes, vec![0, 1]);
    assert_eq!(model.beta, 1);
}

#[test]
fn sample_network_sources_and_robustness() {
    let model = Model::build(&scenario_s2()).unwrap();
    let s0: BTreeSet<u32> = GROUP_R1.iter().copied().chain([SPOOFER]).collect();
    let s1: BTreeSet<u32> = GROUP_R2.iter().copied().chain([SPOOFER]).collect();
    assert_eq!(model.sources[&0], s0);
    assert_eq!(model.sources[&1], s1);
    let g = model.graph.at(0);
    assert_eq!(max_strong_robustness(g, &s0).unwrap(), 5);
    assert_eq!(max_strong_robustness(g, &s1).unwrap(), 5);
    let report = preflight(&model);
    for m in &report.modes {
        assert_eq!(m.r_star, 5);
        let met: Vec<bool> = m.checks.iter().map(|c| c.met).collect();
        assert_eq!(met, vec![false, true, false]);
    }
}

#[test]
fn s1_reaches_omniscience() {
    let trace = run(&Model::build(&scenario_s1()).unwrap()).unwrap();
    assert_eq!(trace.estimates.len(), 200);
    for j in 0..2 {
        assert!(trace.max_error(150, j) < 1e-6, "mode {j}: {}", trace.max_error(150, j));
        assert!(trace.max_error(199, j) < 1e-6);
    }
    let early =
        GROUP_R3.iter().flat_map(|&n| trace.error_series(n, 0)[..20].to_vec()).fold(0.0f64, |m, e| m.max(e.abs()));
    assert!(early > 1e-3);
}

#[test]
fn s1_spoofer_alternates_values() {
    let trace = run(&Model::build(&scenario_s1()).unwrap()).unwrap();
    let spoofed: Vec<_> = trace.impersonations.iter().filter(|im| im.identity == 1).collect();
    assert!(!spoofed.is_empty());
    assert!(spoofed.iter().all(|im| im.send_step % 2 == 0 && GROUP_R3.contains(&im.receiver)));
}

#[test]
fn s2_followers_freeze() {
    let trace = run(&Model::build(&scenario_s2()).unwrap()).unwrap();
    for k in 2..200 {
        for &n in &GROUP_R2 {
            assert_eq!(trace.estimate_series(n, 0)[k], 6.0, "R2 node {n} step {k}");
        }
        for &n in &GROUP_R3 {
            assert_eq!(trace.estimate_series(n, 0)[k], 7.0, "R3 node {n} step {k}");
        }
    }
    let e = trace.error_series(9, 0);
    for k in 2..199 {
        let affine = 1.02 * e[k] + 7.0 * (1.0 - 1.02);
        assert!((e[k + 1] - affine).abs() <= 1e-9 * e[k + 1].abs().max(1.0));
    }
}
