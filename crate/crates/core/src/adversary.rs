//! Smart-spoofer capacity accounting and attack policies.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::DirectedGraph;
use crate::sim::mailbox::{PacketKind, CHI};
use crate::NodeId;

/// Regular identities a spoofer of capacity `alpha` can impersonate in any
/// `k_bar` consecutive steps.
pub fn beta_from_capacity(alpha: usize, k_bar: usize) -> usize {
    assert!(alpha >= 1 && k_bar >= 1, "alpha and k_bar must be positive");
    alpha * k_bar - 1
}

#[derive(Clone, Debug, Error, PartialEq, Eq, Serialize, Deserialize)]
pub enum LedgerViolation {
    #[error("spoofer {spoofer} emitted {count} identities at step {step} (capacity {alpha})")]
    PerStep { spoofer: NodeId, step: u64, count: usize, alpha: usize },
    #[error("spoofer {spoofer} impersonated {identities:?} within steps {start}..={end} (budget {beta})")]
    Window { spoofer: NodeId, start: u64, end: u64, identities: BTreeSet<NodeId>, beta: usize },
    #[error("spoofer {spoofer} charged step {step} after step {last}")]
    OutOfOrder { spoofer: NodeId, step: u64, last: u64 },
}

/// Enforces per-step capacity and the sliding-window impersonation budget.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CapacityLedger {
    spoofer: NodeId,
    alpha: usize,
    k_bar: u64,
    history: VecDeque<(u64, BTreeSet<NodeId>)>,
    last: Option<u64>,
}

impl CapacityLedger {
    pub fn new(spoofer: NodeId, alpha: usize, k_bar: u64) -> Self {
        Self { spoofer, alpha, k_bar, history: VecDeque::new(), last: None }
    }

    pub fn beta(&self) -> usize {
        beta_from_capacity(self.alpha, self.k_bar as usize)
    }

    fn check(&self, step: u64, identities: &BTreeSet<NodeId>) -> Result<BTreeSet<NodeId>, LedgerViolation> {
        if let Some(last) = self.last {
            if step <= last {
                return Err(LedgerViolation::OutOfOrder { spoofer: self.spoofer, step, last });
            }
        }
        if identities.len() > self.alpha {
            return Err(LedgerViolation::PerStep {
                spoofer: self.spoofer,
                step,
                count: identities.len(),
                alpha: self.alpha,
            });
        }
        let start = (step + 1).saturating_sub(self.k_bar);
        let mut window: BTreeSet<NodeId> =
            self.history.iter().filter(|(s, _)| *s >= start).flat_map(|(_, ids)| ids.iter().copied()).collect();
        window.extend(identities.iter().filter(|&&i| i != self.spoofer));
        if window.len() > self.beta() {
            return Err(LedgerViolation::Window {
                spoofer: self.spoofer,
                start,
                end: step,
                identities: window,
                beta: self.beta(),
            });
        }
        Ok(identities.iter().filter(|&&i| i != self.spoofer).copied().collect())
    }

    pub fn would_accept(&self, step: u64, identities: &BTreeSet<NodeId>) -> bool {
        self.check(step, identities).is_ok()
    }

    /// Records the identities emitted at `step`. Steps must be charged in
    /// increasing order; silent steps may be skipped.
    pub fn charge(&mut self, step: u64, identities: &BTreeSet<NodeId>) -> Result<(), LedgerViolation> {
        let impersonated = self.check(step, identities)?;
        self.last = Some(step);
        self.history.push_back((step, impersonated));
        let start = (step + 1).saturating_sub(self.k_bar);
        while self.history.front().is_some_and(|(s, _)| *s < start) {
            self.history.pop_front();
        }
        Ok(())
    }
}

/// Arrival position of a packet: step, then order within the step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Arrival {
    pub step: u64,
    pub seq: u64,
}

/// Whether a spoofed packet replaces a genuine one before the victim reads
/// its mailbox.
pub fn impersonation_feasible(genuine_sent: u64, genuine: Arrival, spoof: Arrival, victim_read: u64) -> bool {
    if victim_read < genuine.step || genuine.step < genuine_sent {
        return false;
    }
    let delay = genuine.step - genuine_sent;
    let wait = victim_read - genuine.step;
    delay + wait > 0 && spoof > genuine && spoof.step <= victim_read
}

/// One emission: packets of `kind` sent under `identity` to `targets`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Emission {
    pub identity: NodeId,
    pub targets: Vec<NodeId>,
    pub packet: PacketKind,
    pub delay: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptedEmission {
    pub step: u64,
    pub identity: NodeId,
    pub targets: Vec<NodeId>,
    pub packet: PacketKind,
    pub delay: u64,
}

/// Alternates between own-identity packets at steps `m*k_bar - 1` and
/// impersonation of one regular node at steps `m*k_bar`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualSequence {
    pub attacked_mode: usize,
    pub impersonate: NodeId,
    /// Empty means every out-neighbour.
    #[serde(default)]
    pub targets: Vec<NodeId>,
    pub own_value: f64,
    pub spoof_value: f64,
    pub own_delay: u64,
    pub spoof_delay: u64,
    /// Modes announced with a valid flag under the spoofer's own identity.
    #[serde(default)]
    pub announce_modes: Vec<usize>,
    /// Send an invalid flag for the attacked mode as the impersonated node.
    #[serde(default)]
    pub block_flags: bool,
    #[serde(default)]
    pub block_delay: u64,
    /// Report the true value of every other mode under its own identity.
    #[serde(default)]
    pub honest_other_modes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomValued {
    /// Values are the truth plus a uniform offset in `[-amplitude, amplitude]`.
    pub amplitude: f64,
    pub own_probability: f64,
    pub impersonation_probability: f64,
    /// Announce valid flags for every unstable mode under its own identity.
    #[serde(default)]
    pub announce: bool,
    /// Send invalid flags along with impersonated estimates.
    #[serde(default)]
    pub forge_flags: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SpooferPolicy {
    #[default]
    Silent,
    Scripted {
        emissions: Vec<ScriptedEmission>,
    },
    DualSequence(DualSequence),
    RandomValued(RandomValued),
}

/// Ground truth available to a spoofer at one step.
pub struct AdversaryView<'a> {
    pub step: u64,
    pub k_bar: u64,
    pub tau_bar: u64,
    pub true_z: &'a [f64],
    pub unstable_modes: &'a [usize],
    pub graph: &'a DirectedGraph,
    pub regular: &'a BTreeSet<NodeId>,
}

/// A spoofer's policy state together with its ledger.
#[derive(Clone, Debug)]
pub struct SpooferRuntime {
    pub id: NodeId,
    policy: SpooferPolicy,
    ledger: CapacityLedger,
    rng: ChaCha8Rng,
    link_delays: BTreeMap<NodeId, u64>,
}

impl SpooferRuntime {
    pub fn new(id: NodeId, alpha: usize, k_bar: u64, policy: SpooferPolicy, seed: u64) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(id)).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        Self { id, policy, ledger: CapacityLedger::new(id, alpha, k_bar), rng, link_delays: BTreeMap::new() }
    }

    pub fn policy(&self) -> &SpooferPolicy {
        &self.policy
    }

    /// Emissions for this step, charged against the ledger.
    pub fn act(&mut self, view: &AdversaryView<'_>) -> Result<Vec<Emission>, LedgerViolation> {
        let emissions = match self.policy.clone() {
            SpooferPolicy::Silent => Vec::new(),
            SpooferPolicy::Scripted { emissions } => emissions
                .iter()
                .filter(|e| e.step == view.step)
                .map(|e| Emission {
                    identity: e.identity,
                    targets: e.targets.clone(),
                    packet: e.packet,
                    delay: e.delay,
                })
                .collect(),
            SpooferPolicy::DualSequence(p) => self.dual_sequence(&p, view),
            SpooferPolicy::RandomValued(p) => self.random_valued(&p, view),
        };
        let identities: BTreeSet<NodeId> = emissions.iter().map(|e| e.identity).collect();
        if !identities.is_empty() {
            self.ledger.charge(view.step, &identities)?;
        }
        Ok(emissions)
    }

    fn out_targets(&self, view: &AdversaryView<'_>) -> Vec<NodeId> {
        view.graph.out_neighbors(self.id).iter().filter(|t| view.regular.contains(t)).copied().collect()
    }

    fn dual_sequence(&mut self, p: &DualSequence, view: &AdversaryView<'_>) -> Vec<Emission> {
        let k_bar = view.k_bar.max(1);
        let targets = if p.targets.is_empty() { self.out_targets(view) } else { p.targets.clone() };
        let mut out = Vec::new();
        if (view.step + 1).is_multiple_of(k_bar) {
            for &mode in &p.announce_modes {
                out.push(Emission {
                    identity: self.id,
                    targets: targets.clone(),
                    packet: PacketKind::Flag { mode, token: CHI },
                    delay: p.own_delay,
                });
            }
            out.push(Emission {
                identity: self.id,
                targets: targets.clone(),
                packet: PacketKind::Estimate { mode: p.attacked_mode, value: p.own_value },
                delay: p.own_delay,
            });
            if p.honest_other_modes {
                for (mode, &z) in view.true_z.iter().enumerate() {
                    if mode != p.attacked_mode {
                        out.push(Emission {
                            identity: self.id,
                            targets: targets.clone(),
                            packet: PacketKind::Estimate { mode, value: z },
                            delay: p.own_delay,
                        });
                    }
                }
            }
        } else if view.step.is_multiple_of(k_bar) {
            // only receivers that know the impersonated identity
            let victims: Vec<NodeId> =
                targets.iter().filter(|&&t| view.graph.has_edge(p.impersonate, t)).copied().collect();
            if p.block_flags {
                out.push(Emission {
                    identity: p.impersonate,
                    targets: victims.clone(),
                    packet: PacketKind::Flag { mode: p.attacked_mode, token: 0 },
                    delay: p.block_delay,
                });
            }
            out.push(Emission {
                identity: p.impersonate,
                targets: victims,
                packet: PacketKind::Estimate { mode: p.attacked_mode, value: p.spoof_value },
                delay: p.spoof_delay,
            });
        }
        out
    }

    fn link_delay(&mut self, target: NodeId, tau_bar: u64) -> u64 {
        let rng = &mut self.rng;
        *self.link_delays.entry(target).or_insert_with(|| rng.gen_range(0..=tau_bar))
    }

    fn random_valued(&mut self, p: &RandomValued, view: &AdversaryView<'_>) -> Vec<Emission> {
        let targets = self.out_targets(view);
        if targets.is_empty() {
            return Vec::new();
        }
        let mut out = Vec::new();
        let roll: f64 = self.rng.gen();
        if roll < p.impersonation_probability {
            let t = targets[self.rng.gen_range(0..targets.len())];
            let candidates: Vec<NodeId> =
                view.graph.in_neighbors(t).iter().filter(|h| view.regular.contains(h)).copied().collect();
            if !candidates.is_empty() {
                let h = candidates[self.rng.gen_range(0..candidates.len())];
                if self.ledger.would_accept(view.step, &BTreeSet::from([h])) {
                    let victims: Vec<NodeId> =
                        targets.iter().filter(|&&v| view.graph.has_edge(h, v)).copied().collect();
                    for v in victims {
                        let delay = self.link_delay(v, view.tau_bar);
                        if p.forge_flags && !view.unstable_modes.is_empty() {
                            let mode = view.unstable_modes[self.rng.gen_range(0..view.unstable_modes.len())];
                            out.push(Emission {
                                identity: h,
                                targets: vec![v],
                                packet: PacketKind::Flag { mode, token: 0 },
                                delay,
                            });
                        }
                        for (mode, &z) in view.true_z.iter().enumerate() {
                            let value = z + p.amplitude * self.rng.gen_range(-1.0..=1.0);
                            out.push(Emission {
                                identity: h,
                                targets: vec![v],
                                packet: PacketKind::Estimate { mode, value },
                                delay,
                            });
                        }
                    }
                    return out;
                }
            }
        }
        if self.rng.gen::<f64>() < p.own_probability {
            for &v in &targets {
                let delay = self.link_delay(v, view.tau_bar);
                if p.announce {
                    for &mode in view.unstable_modes {
                        out.push(Emission {
                            identity: self.id,
                            targets: vec![v],
                            packet: PacketKind::Flag { mode, token: CHI },
                            delay,
                        });
                    }
                }
                for (mode, &z) in view.true_z.iter().enumerate() {
                    let value = z + p.amplitude * self.rng.gen_range(-1.0..=1.0);
                    out.push(Emission {
                        identity: self.id,
                        targets: vec![v],
                        packet: PacketKind::Estimate { mode, value },
                        delay,
                    });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_examples() {
        assert_eq!(beta_from_capacity(1, 2), 1);
        assert_eq!(beta_from_capacity(1, 1), 0);
        assert_eq!(beta_from_capacity(2, 3), 5);
    }

    #[test]
    fn own_plus_impersonation_exceeds_unit_capacity() {
        let mut l = CapacityLedger::new(14, 1, 2);
        let err = l.charge(0, &BTreeSet::from([14, 1])).unwrap_err();
        assert!(matches!(err, LedgerViolation::PerStep { count: 2, alpha: 1, .. }));
    }

    #[test]
    fn alternating_schedule_is_legal() {
        let mut l = CapacityLedger::new(14, 1, 2);
        for step in 0..10 {
            let ids = if step % 2 == 0 { BTreeSet::from([1]) } else { BTreeSet::from([14]) };
            l.charge(step, &ids).unwrap();
        }
    }

    #[test]
    fn window_budget() {
        let mut l = CapacityLedger::new(99, 2, 2);
        l.charge(0, &BTreeSet::from([1, 2])).unwrap();
        assert!(l.would_accept(1, &BTreeSet::from([3])));
        let err = l.charge(1, &BTreeSet::from([3, 4])).unwrap_err();
        assert!(matches!(err, LedgerViolation::Window { beta: 3, .. }));
        // identities from step 0 fall out of the window at step 2
        l.charge(2, &BTreeSet::from([3, 4])).unwrap();
    }

    #[test]
    fn switching_identity_inside_window_fails() {
        let mut l = CapacityLedger::new(14, 1, 2);
        l.charge(0, &BTreeSet::from([1])).unwrap();
        assert!(l.charge(1, &BTreeSet::from([2])).is_err());
    }

    #[test]
    fn feasibility_examples() {
        let a = |step, seq| Arrival { step, seq };
        assert!(!impersonation_feasible(3, a(3, 0), a(3, 1), 3));
        assert!(impersonation_feasible(2, a(3, 0), a(4, 0), 5));
        assert!(!impersonation_feasible(2, a(3, 0), a(2, 0), 5));
        assert!(!impersonation_feasible(2, a(3, 0), a(6, 0), 5));
        assert!(impersonation_feasible(2, a(3, 0), a(3, 1), 3));
    }

    #[test]
    fn silent_policy_emits_nothing() {
        let g = DirectedGraph::from_edges([1, 2], [(2, 1)]).unwrap();
        let regular = BTreeSet::from([1]);
        let mut rt = SpooferRuntime::new(2, 1, 2, SpooferPolicy::Silent, 0);
        for step in 0..5 {
            let view = AdversaryView {
                step,
                k_bar: 2,
                tau_bar: 1,
                true_z: &[1.0],
                unstable_modes: &[0],
                graph: &g,
                regular: &regular,
            };
            assert!(rt.act(&view).unwrap().is_empty());
        }
    }
}
