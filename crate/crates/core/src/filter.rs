//! Trimmed-mean consensus update for undetectable modes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::NodeId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FilterError {
    #[error("no values survived trimming")]
    EmptyRetainedSet,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub f: usize,
    pub beta: usize,
    pub lambda: f64,
    /// Replaces `(beta + 1) * f` when set.
    pub trim_override: Option<usize>,
    /// Advance each value by `lambda^(read - sent)` before trimming.
    pub delay_compensation: bool,
}

impl FilterParams {
    pub fn new(f: usize, beta: usize, lambda: f64) -> Self {
        Self { f, beta, lambda, trim_override: None, delay_compensation: true }
    }

    pub fn trim_count(&self) -> usize {
        self.trim_override.unwrap_or((self.beta + 1) * self.f)
    }
}

/// Last estimate received from one identity, with its timing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateSlot {
    pub sender: NodeId,
    pub value: f64,
    pub sent_at: u64,
    pub arrived_at: u64,
    pub read_at: u64,
}

impl EstimateSlot {
    /// A slot read in the step it was sent.
    pub fn fresh(sender: NodeId, value: f64, step: u64) -> Self {
        Self { sender, value, sent_at: step, arrived_at: step, read_at: step }
    }

    /// Transmission delay (tau).
    pub fn delay(&self) -> u64 {
        self.arrived_at - self.sent_at
    }

    /// Time spent waiting in the mailbox before the read.
    pub fn wait(&self) -> u64 {
        self.read_at - self.arrived_at
    }

    pub fn staleness(&self) -> u64 {
        self.read_at - self.sent_at
    }

    fn aligned(&self, lambda: f64) -> f64 {
        lambda.powi(self.staleness() as i32) * self.value
    }
}

/// Drops the `c` smallest and `c` largest values; ties ordered by sender id.
pub fn trim_extremes(slots: &[EstimateSlot], c: usize) -> Vec<EstimateSlot> {
    if slots.len() <= 2 * c {
        return Vec::new();
    }
    let mut sorted = slots.to_vec();
    sorted.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.sender.cmp(&b.sender)));
    sorted[c..sorted.len() - c].to_vec()
}

pub fn make_weights(retained: &[EstimateSlot]) -> Result<Vec<(NodeId, f64)>, FilterError> {
    if retained.is_empty() {
        return Err(FilterError::EmptyRetainedSet);
    }
    let w = 1.0 / retained.len() as f64;
    Ok(retained.iter().map(|s| (s.sender, w)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub value: f64,
    pub retained: Vec<NodeId>,
    /// True when nothing survived trimming and the estimate was held.
    pub held: bool,
}

pub fn filtered_update(params: &FilterParams, slots: &[EstimateSlot], current: f64) -> FilterOutcome {
    let prepared: Vec<EstimateSlot> = if params.delay_compensation {
        slots.iter().map(|s| EstimateSlot { value: s.aligned(params.lambda), ..*s }).collect()
    } else {
        slots.to_vec()
    };
    let retained = trim_extremes(&prepared, params.trim_count());
    match make_weights(&retained) {
        Ok(weights) => {
            // sum in sender order so the result does not depend on slot order
            let mut terms: Vec<(NodeId, f64)> =
                retained.iter().zip(&weights).map(|(s, (_, w))| (s.sender, w * s.value)).collect();
            terms.sort_by_key(|t| t.0);
            let mean: f64 = terms.iter().map(|t| t.1).sum();
            FilterOutcome {
                value: params.lambda * mean,
                retained: terms.into_iter().map(|t| t.0).collect(),
                held: false,
            }
        }
        Err(FilterError::EmptyRetainedSet) => FilterOutcome { value: current, retained: Vec::new(), held: true },
    }
}

/// Effective impersonation budget under randomized update schedules.
pub fn beta_prime(beta: usize, k_bar: usize) -> usize {
    assert!(k_bar >= 1, "k_bar must be positive");
    beta / k_bar + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slots(values: &[f64]) -> Vec<EstimateSlot> {
        values.iter().enumerate().map(|(i, &v)| EstimateSlot::fresh(i as NodeId + 1, v, 0)).collect()
    }

    #[test]
    fn trim_examples() {
        let s = slots(&[10.0, 20.0, 30.0, 40.0, 50.0]);
        let kept = trim_extremes(&s, 2);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].value, 30.0);
        assert_eq!(trim_extremes(&s, 0).len(), 5);
        assert!(trim_extremes(&slots(&[1.0, 2.0, 3.0, 4.0]), 2).is_empty());
    }

    #[test]
    fn ties_broken_by_sender() {
        let s = slots(&[5.0, 5.0, 5.0]);
        let kept = trim_extremes(&s, 1);
        assert_eq!(kept[0].sender, 2);
    }

    #[test]
    fn weights() {
        let w = make_weights(&slots(&[1.0, 2.0, 3.0])).unwrap();
        assert!(w.iter().all(|(_, x)| (x - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(make_weights(&slots(&[4.0])).unwrap(), vec![(1, 1.0)]);
        let w = make_weights(&slots(&[1.0; 5])).unwrap();
        assert!((w.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|p| p.1 == 0.2));
        assert_eq!(make_weights(&[]), Err(FilterError::EmptyRetainedSet));
    }

    #[test]
    fn update_examples() {
        let p = FilterParams::new(1, 1, 1.02);
        let out = filtered_update(&p, &slots(&[10.0, 20.0, 30.0, 40.0, 50.0]), 0.0);
        assert!((out.value - 30.6).abs() < 1e-12);
        assert!(!out.held);
        let out = filtered_update(&p, &slots(&[3.0; 6]), 0.0);
        assert!((out.value - 3.06).abs() < 1e-12);
        let out = filtered_update(&p, &slots(&[1.0, 2.0, 3.0, 4.0]), 7.0);
        assert_eq!(out.value, 7.0);
        assert!(out.held);
    }

    #[test]
    fn stale_values_are_advanced() {
        let p = FilterParams::new(0, 0, 2.0);
        let s = EstimateSlot { sender: 1, value: 3.0, sent_at: 4, arrived_at: 6, read_at: 7 };
        assert_eq!((s.delay(), s.wait(), s.staleness()), (2, 1, 3));
        assert_eq!(filtered_update(&p, &[s], 0.0).value, 2.0 * 8.0 * 3.0);
        let literal = FilterParams { delay_compensation: false, ..p };
        assert_eq!(filtered_update(&literal, &[s], 0.0).value, 6.0);
    }

    #[test]
    fn beta_prime_examples() {
        assert_eq!(beta_prime(1, 2), 1);
        assert_eq!(beta_prime(5, 3), 2);
        // formula gives alpha for k_bar = 1, not alpha - 1
        for alpha in 1..=5 {
            assert_eq!(beta_prime(alpha - 1, 1), alpha);
        }
    }
}
