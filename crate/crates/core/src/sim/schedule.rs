//! Per-node update schedules.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum UpdateSchedule {
    /// Awake at steps `offset, offset + period, ...` (and never before `offset`).
    Periodic { period: u64, offset: u64 },
    /// Awake with probability `probability`, forced once `k_bar` steps have
    /// passed since the last update.
    Randomized { probability: f64 },
}

impl Default for UpdateSchedule {
    fn default() -> Self {
        UpdateSchedule::Periodic { period: 1, offset: 0 }
    }
}

impl UpdateSchedule {
    pub fn validate(&self, k_bar: u64) -> Result<(), String> {
        match *self {
            UpdateSchedule::Periodic { period, offset } => {
                if period == 0 || period > k_bar {
                    return Err(format!("period {period} must lie in 1..={k_bar}"));
                }
                if offset >= period {
                    return Err(format!("offset {offset} must be below period {period}"));
                }
            }
            UpdateSchedule::Randomized { probability } => {
                if !(probability > 0.0 && probability <= 1.0) {
                    return Err(format!("probability {probability} must lie in (0, 1]"));
                }
            }
        }
        Ok(())
    }

    pub fn is_randomized(&self) -> bool {
        matches!(self, UpdateSchedule::Randomized { .. })
    }
}

/// Tracks the last update of one node.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleState {
    pub schedule: UpdateSchedule,
    last: Option<u64>,
}

impl ScheduleState {
    pub fn new(schedule: UpdateSchedule) -> Self {
        Self { schedule, last: None }
    }

    /// Decides whether the node is awake at `step`. Must be called once per
    /// step in increasing order; the RNG is consumed only by randomized nodes.
    pub fn awake<R: Rng>(&mut self, step: u64, k_bar: u64, rng: &mut R) -> bool {
        let awake = match self.schedule {
            UpdateSchedule::Periodic { period, offset } => step >= offset && (step - offset).is_multiple_of(period),
            UpdateSchedule::Randomized { probability } => {
                let draw: f64 = rng.gen();
                // a node that never updated counts as having updated at step -1
                let since = match self.last {
                    Some(l) => step - l,
                    None => step + 1,
                };
                draw < probability || since >= k_bar
            }
        };
        if awake {
            self.last = Some(step);
        }
        awake
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(s: UpdateSchedule, k_bar: u64, steps: u64) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut st = ScheduleState::new(s);
        (0..steps).filter(|&k| st.awake(k, k_bar, &mut rng)).collect()
    }

    #[test]
    fn periodic_even_steps() {
        assert_eq!(run(UpdateSchedule::Periodic { period: 2, offset: 0 }, 2, 7), vec![0, 2, 4, 6]);
        assert_eq!(run(UpdateSchedule::Periodic { period: 2, offset: 1 }, 2, 6), vec![1, 3, 5]);
    }

    #[test]
    fn randomized_certain() {
        assert_eq!(run(UpdateSchedule::Randomized { probability: 1.0 }, 3, 5), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn randomized_forced() {
        let steps = run(UpdateSchedule::Randomized { probability: 1e-300 }, 3, 12);
        assert_eq!(steps, vec![2, 5, 8, 11]);
    }

    #[test]
    fn validation() {
        assert!(UpdateSchedule::Periodic { period: 3, offset: 0 }.validate(2).is_err());
        assert!(UpdateSchedule::Periodic { period: 2, offset: 2 }.validate(2).is_err());
        assert!(UpdateSchedule::Randomized { probability: 0.0 }.validate(2).is_err());
        assert!(UpdateSchedule::Randomized { probability: 0.5 }.validate(2).is_ok());
    }
}
