use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use spoofres_core::adversary::SpooferPolicy;
use spoofres_core::config::Model;
use spoofres_core::observer::{GainSpec, LuenbergerObserver};
use spoofres_core::scenarios::{scenario_s1, GROUP_R1, GROUP_R2, GROUP_R3};
use spoofres_core::sim::run;

/// Scalar observer with closed-loop pole `pole`, run against the truth.
fn scalar_errors(lambda: f64, c: f64, pole: f64, z0: f64, est0: f64, steps: usize) -> Vec<f64> {
    let gain = (lambda - pole) / c;
    let spec = GainSpec::Explicit(vec![vec![gain]]);
    let mut obs = LuenbergerObserver::new(
        1,
        vec![0],
        vec![lambda],
        DMatrix::from_element(1, 1, c),
        &spec,
        DVector::from_element(1, est0),
    )
    .unwrap();
    let mut z = z0;
    let mut errors = vec![est0 - z0];
    for _ in 0..steps {
        let y = DVector::from_element(1, c * z);
        let est = obs.step(&y).unwrap()[0];
        z *= lambda;
        errors.push(est - z);
    }
    errors
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn scalar_error_follows_closed_loop(
        lambda in 1.0f64..1.1,
        c in prop_oneof![0.5f64..2.0, -2.0f64..-0.5],
        pole in -0.9f64..0.9,
        z0 in -10.0f64..10.0,
        est0 in -10.0f64..10.0,
    ) {
        let errors = scalar_errors(lambda, c, pole, z0, est0, 60);
        let gain = (lambda - pole) / c;
        let closed = lambda - gain * c;
        let rho = closed.abs();
        let mut z_max = z0.abs();
        for k in 0..errors.len() - 1 {
            z_max = z_max.max(z0.abs() * lambda.powi(k as i32 + 1));
            // roundoff enters through the products with the growing truth
            let eps = 1e-13 * (z_max + est0.abs() + 1.0) * (k as f64 + 1.0);
            prop_assert!((errors[k + 1] - closed * errors[k]).abs() <= eps, "recursion at {}", k);
            prop_assert!(errors[k + 1].abs() <= rho.powi(k as i32 + 1) * errors[0].abs() + eps * (k as f64 + 1.0));
        }
    }
}

#[test]
fn exact_estimate_keeps_zero_error() {
    let errors = scalar_errors(1.02, 1.0, 0.5, 3.0, 3.0, 50);
    assert!(errors.iter().all(|e| e.abs() < 1e-12));
}

#[test]
fn deadbeat_gain_clears_error_in_one_step() {
    let errors = scalar_errors(1.05, 2.0, 0.0, 1.0, 7.0, 5);
    assert!(errors[1..].iter().all(|e| e.abs() < 1e-12));
}

#[test]
fn source_estimates_ignore_the_network() {
    let attacked = run(&Model::build(&scenario_s1()).unwrap()).unwrap();
    let mut quiet = scenario_s1();
    quiet.adversary.spoofers[0].policy = SpooferPolicy::Silent;
    for node in quiet.nodes.iter_mut().filter(|n| GROUP_R3.contains(&n.id)) {
        node.initial_estimate = Some(vec![-500.0, 40.0]);
    }
    let quiet = run(&Model::build(&quiet).unwrap()).unwrap();
    for &n in &GROUP_R1 {
        assert_eq!(attacked.estimate_series(n, 0), quiet.estimate_series(n, 0));
    }
    for &n in &GROUP_R2 {
        assert_eq!(attacked.estimate_series(n, 1), quiet.estimate_series(n, 1));
    }
}
