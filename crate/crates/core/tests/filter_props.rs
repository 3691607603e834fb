use std::collections::BTreeSet;

use proptest::prelude::*;
use spoofres_core::filter::{filtered_update, EstimateSlot, FilterParams};
use spoofres_core::NodeId;

fn fresh(values: &[f64]) -> Vec<EstimateSlot> {
    values.iter().enumerate().map(|(i, &v)| EstimateSlot::fresh(i as NodeId + 1, v, 10)).collect()
}

fn bounds(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    values.into_iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn values(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1e3f64..1e3, 1..=max_len)
}

fn within(x: f64, lo: f64, hi: f64) -> bool {
    let slack = 1e-12 * lo.abs().max(hi.abs()).max(1.0);
    x >= lo - slack && x <= hi + slack
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn output_stays_inside_retained_and_input_range(
        vals in values(15),
        f in 0usize..=2,
        beta in 0usize..=2,
        lambda in 0.5f64..1.1,
    ) {
        let params = FilterParams::new(f, beta, lambda);
        let slots = fresh(&vals);
        let out = filtered_update(&params, &slots, -7.0);
        if out.held {
            prop_assert_eq!(out.value, -7.0);
            return Ok(());
        }
        let retained = out.retained.iter().map(|id| vals[*id as usize - 1]);
        let (rlo, rhi) = bounds(retained);
        let (lo, hi) = bounds(vals.iter().copied());
        prop_assert!(lo <= rlo && rhi <= hi);
        prop_assert!(within(out.value, lambda * rlo, lambda * rhi));
    }

    #[test]
    fn stale_slots_are_contained_after_alignment(
        vals in proptest::collection::vec(-1e3f64..1e3, 5..=12),
        ages in proptest::collection::vec((0u64..=3, 0u64..=2), 12),
        lambda in 0.9f64..1.1,
    ) {
        let params = FilterParams::new(1, 1, lambda);
        let slots: Vec<EstimateSlot> = vals
            .iter()
            .zip(&ages)
            .enumerate()
            .map(|(i, (&v, &(delay, wait)))| EstimateSlot {
                sender: i as NodeId + 1,
                value: v,
                sent_at: 20,
                arrived_at: 20 + delay,
                read_at: 20 + delay + wait,
            })
            .collect();
        let out = filtered_update(&params, &slots, 0.0);
        prop_assume!(!out.held);
        let aligned = slots.iter().map(|s| lambda.powi((s.read_at - s.sent_at) as i32) * s.value);
        let (lo, hi) = bounds(aligned);
        prop_assert!(within(out.value, lambda * lo, lambda * hi));
    }

    #[test]
    fn adversarial_values_are_sandwiched(
        regular in values(12),
        (f, beta, adversarial) in (1usize..=2, 0usize..=1).prop_flat_map(|(f, beta)| {
            let c = (beta + 1) * f;
            (Just(f), Just(beta), proptest::collection::vec(prop_oneof![-1e9f64..1e9, -1e3f64..1e3], 0..=c))
        }),
        lambda in 0.5f64..1.1,
    ) {
        let all: Vec<f64> = regular.iter().chain(&adversarial).copied().collect();
        let bad: BTreeSet<NodeId> = (regular.len()..all.len()).map(|i| i as NodeId + 1).collect();
        let params = FilterParams::new(f, beta, lambda);
        let out = filtered_update(&params, &fresh(&all), 0.0);
        let (lo, hi) = bounds(regular.iter().copied());
        for id in out.retained.iter().filter(|id| bad.contains(id)) {
            let v = all[*id as usize - 1];
            prop_assert!(lo <= v && v <= hi, "retained adversarial {v} outside [{lo}, {hi}]");
        }
        if !out.held {
            prop_assert!(within(out.value, lambda * lo, lambda * hi));
        }
    }

    #[test]
    fn slot_order_does_not_matter(vals in values(14), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let params = FilterParams::new(1, 1, 1.02);
        let slots = fresh(&vals);
        let mut shuffled = slots.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = filtered_update(&params, &slots, 3.0);
        let b = filtered_update(&params, &shuffled, 3.0);
        prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
        prop_assert_eq!(a.retained, b.retained);
    }

    #[test]
    fn scaling_inputs_scales_output(vals in proptest::collection::vec(-1e3f64..1e3, 5..=14), s in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0]) {
        let params = FilterParams::new(1, 1, 0.97);
        let scaled: Vec<f64> = vals.iter().map(|v| s * v).collect();
        let a = filtered_update(&params, &fresh(&vals), 0.0);
        let b = filtered_update(&params, &fresh(&scaled), 0.0);
        prop_assume!(!a.held);
        let scale = vals.iter().fold(1.0f64, |m, v| m.max(v.abs())) * s.abs();
        prop_assert!((b.value - s * a.value).abs() <= 1e-12 * scale);
    }

    #[test]
    fn retained_count_follows_trim_budget(vals in values(16), f in 0usize..=2, beta in 0usize..=2) {
        let params = FilterParams::new(f, beta, 1.0);
        let out = filtered_update(&params, &fresh(&vals), 0.0);
        let expected = vals.len().saturating_sub(2 * (beta + 1) * f);
        prop_assert_eq!(out.retained.len(), expected);
        prop_assert_eq!(out.held, expected == 0);
        if vals.len() > 2 * (beta + 1) * f {
            prop_assert!(!out.held);
        }
    }
}
