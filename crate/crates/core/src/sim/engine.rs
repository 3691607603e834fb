//! Discrete-time simulation loop.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adversary::{AdversaryView, LedgerViolation, SpooferRuntime};
use crate::config::Model;
use crate::filter::{filtered_update, EstimateSlot, FilterParams};
use crate::lti::step_truth;
use crate::medag::{activation_threshold, FlagObservation, MedagEvent, MedagNodeState, ModeConstruction};
use crate::observer::{LuenbergerObserver, ObserverError};
use crate::sim::mailbox::{Mailbox, Packet, PacketKind, SlotKind, CHI};
use crate::sim::schedule::ScheduleState;
use crate::sim::trace::{DropReason, Impersonation, SimTrace, TraceEvent, TraceParams};
use crate::NodeId;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("ledger violation: {0}")]
    CapacityExceeded(#[from] LedgerViolation),
    #[error("observer of node {node}: {source}")]
    Observer {
        node: NodeId,
        #[source]
        source: ObserverError,
    },
    #[error("spoofer {spoofer} chose delay {delay} above tau_bar {tau_bar}")]
    DelayOutOfRange { spoofer: NodeId, delay: u64, tau_bar: u64 },
}

/// Follower bookkeeping for one filtered mode.
#[derive(Clone, Debug)]
struct FollowerMode {
    /// Last filtered update kept at least one value.
    tracking: bool,
    holding: bool,
}

#[derive(Clone, Debug)]
struct NodeRuntime {
    id: NodeId,
    schedule: ScheduleState,
    observer: Option<LuenbergerObserver>,
    detectable: Vec<usize>,
    undetectable: Vec<usize>,
    estimate: Vec<f64>,
    medag: BTreeMap<usize, MedagNodeState>,
    follower: BTreeMap<usize, FollowerMode>,
    mailbox: Mailbox,
}

#[derive(Clone, Debug)]
struct Pending {
    packet: Packet,
    seq: u64,
}

pub struct Simulation<'m> {
    model: &'m Model,
    horizon: u64,
    nodes: Vec<NodeRuntime>,
    spoofers: Vec<SpooferRuntime>,
    queue: BTreeMap<u64, Vec<Pending>>,
    next_seq: u64,
    schedule_rng: ChaCha8Rng,
    delay_rng: ChaCha8Rng,
    last_arrival: BTreeMap<(NodeId, NodeId), u64>,
}

impl<'m> Simulation<'m> {
    pub fn new(model: &'m Model) -> Result<Self, SimError> {
        Self::with_horizon(model, model.params().horizon)
    }

    pub fn with_horizon(model: &'m Model, horizon: u64) -> Result<Self, SimError> {
        let seed = model.config.seed;
        let mut nodes = Vec::new();
        for &id in &model.regular {
            let split = &model.splits[&id];
            let init = &model.initial[&id];
            let observer = if split.detectable.is_empty() {
                None
            } else {
                let obs = &model.observations[&id];
                let lambda = split.detectable.iter().map(|&j| model.diag.eigenvalues[j]).collect();
                let start = DVector::from_iterator(split.detectable.len(), split.detectable.iter().map(|&j| init[j]));
                Some(
                    LuenbergerObserver::new(
                        id,
                        split.detectable.clone(),
                        lambda,
                        obs.detectable_block(&split.detectable),
                        &model.gains[&id],
                        start,
                    )
                    .map_err(|source| SimError::Observer { node: id, source })?,
                )
            };
            let medag =
                model.medag_modes.iter().map(|&j| (j, MedagNodeState::new(j, split.detectable.contains(&j)))).collect();
            let follower = split
                .undetectable
                .iter()
                .map(|&j| (j, FollowerMode { tracking: !model.params().estimate_before_activation, holding: false }))
                .collect();
            nodes.push(NodeRuntime {
                id,
                schedule: ScheduleState::new(model.schedules[&id]),
                observer,
                detectable: split.detectable.clone(),
                undetectable: split.undetectable.clone(),
                estimate: init.clone(),
                medag,
                follower,
                mailbox: Mailbox::new(),
            });
        }
        let spoofers = model
            .config
            .adversary
            .spoofers
            .iter()
            .map(|s| SpooferRuntime::new(s.id, model.spoofer_alpha(s.id), model.params().k_bar, s.policy.clone(), seed))
            .collect();
        Ok(Self {
            model,
            horizon,
            nodes,
            spoofers,
            queue: BTreeMap::new(),
            next_seq: 0,
            schedule_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5C4E_D01E),
            delay_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x000D_E1A7),
            last_arrival: BTreeMap::new(),
        })
    }

    fn enqueue(&mut self, packet: Packet) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.entry(packet.arrival_step).or_default().push(Pending { packet, seq });
    }

    fn regular_delay(&mut self, from: NodeId, to: NodeId, step: u64) -> u64 {
        let p = self.model.params();
        if !p.random_delays {
            return self.model.delays[&(from, to)];
        }
        let d = self.delay_rng.gen_range(0..=p.tau_bar);
        // serial links deliver in order
        let arrival = (step + d).max(self.last_arrival.get(&(from, to)).copied().unwrap_or(0));
        self.last_arrival.insert((from, to), arrival);
        arrival - step
    }

    pub fn run(mut self) -> Result<SimTrace, SimError> {
        let model = self.model;
        let p = model.params();
        let n = model.diag.dim();
        let lambda = &model.diag.eigenvalues;
        let threshold = activation_threshold(p.f, model.effective_beta);
        let static_graph = model.config.graph_is_static();

        let mut z = model.diag.z0.clone();
        let mut x = model.system.x0.clone();
        let mut trace = SimTrace {
            config_hash: model.config_hash.clone(),
            seed: model.config.seed,
            horizon: self.horizon,
            params: TraceParams { f: p.f, beta: model.effective_beta, k_bar: p.k_bar, tau_bar: p.tau_bar },
            eigenvalues: lambda.clone(),
            regular: model.regular.iter().copied().collect(),
            spoofers: model.spoofers.iter().copied().collect(),
            medag_modes: model.medag_modes.clone(),
            true_z: Vec::new(),
            true_x: Vec::new(),
            estimates: Vec::new(),
            final_estimates: Vec::new(),
            events: Vec::new(),
            constructions: Vec::new(),
            impersonations: Vec::new(),
            awake: model.regular.iter().map(|&id| (id, Vec::new())).collect(),
            max_delay: 0,
            max_staleness: 0,
        };

        for k in 0..self.horizon {
            let g = model.graph.at(k);
            let awake: Vec<bool> = {
                let rng = &mut self.schedule_rng;
                self.nodes.iter_mut().map(|nd| nd.schedule.awake(k, p.k_bar, rng)).collect()
            };
            for (nd, &a) in self.nodes.iter().zip(&awake) {
                if a {
                    trace.awake.get_mut(&nd.id).unwrap().push(k);
                }
            }

            // regular broadcasts of the current estimates and flags
            for idx in (0..self.nodes.len()).filter(|&i| awake[i]) {
                let id = self.nodes[idx].id;
                let mut kinds: Vec<PacketKind> =
                    (0..n).map(|mode| PacketKind::Estimate { mode, value: self.nodes[idx].estimate[mode] }).collect();
                if p.medag_horizon.is_none_or(|h| k <= h) {
                    for (&mode, st) in &self.nodes[idx].medag {
                        if st.counter {
                            kinds.push(PacketKind::Flag { mode, token: CHI });
                        }
                    }
                }
                let targets: Vec<NodeId> = g.out_neighbors(id).iter().copied().collect();
                for t in targets {
                    let delay = self.regular_delay(id, t, k);
                    for &kind in &kinds {
                        self.enqueue(Packet {
                            claimed_sender: id,
                            true_origin: id,
                            receiver: t,
                            kind,
                            send_step: k,
                            arrival_step: k + delay,
                            arrival_seq: 0,
                        });
                    }
                }
            }

            // adversary emissions
            let zs: Vec<f64> = z.iter().copied().collect();
            for si in 0..self.spoofers.len() {
                let sid = self.spoofers[si].id;
                let view = AdversaryView {
                    step: k,
                    k_bar: p.k_bar,
                    tau_bar: p.tau_bar,
                    true_z: &zs,
                    unstable_modes: &model.diag.unstable_modes,
                    graph: g,
                    regular: &model.regular,
                };
                let emissions = self.spoofers[si].act(&view)?;
                for e in emissions {
                    if e.delay > p.tau_bar {
                        return Err(SimError::DelayOutOfRange { spoofer: sid, delay: e.delay, tau_bar: p.tau_bar });
                    }
                    trace.events.push(TraceEvent::Emission {
                        step: k,
                        spoofer: sid,
                        identity: e.identity,
                        targets: e.targets.clone(),
                        packet: e.packet,
                        delay: e.delay,
                    });
                    for &t in &e.targets {
                        if !g.has_edge(sid, t) {
                            trace.events.push(TraceEvent::Dropped {
                                step: k,
                                receiver: t,
                                claimed: e.identity,
                                origin: sid,
                                reason: DropReason::NoSuchEdge,
                            });
                            continue;
                        }
                        self.enqueue(Packet {
                            claimed_sender: e.identity,
                            true_origin: sid,
                            receiver: t,
                            kind: e.packet,
                            send_step: k,
                            arrival_step: k + e.delay,
                            arrival_seq: 0,
                        });
                    }
                }
            }

            // delivery: insertion order, zero-delay regular packets last
            let mut due = self.queue.remove(&k).unwrap_or_default();
            due.sort_by_key(|pd| {
                let fresh = pd.packet.send_step == k && !model.spoofers.contains(&pd.packet.true_origin);
                (fresh, pd.seq)
            });
            for (order, pd) in due.into_iter().enumerate() {
                let mut packet = pd.packet;
                packet.arrival_seq = order as u64;
                let Some(idx) = self.nodes.iter().position(|nd| nd.id == packet.receiver) else {
                    continue; // spoofers keep no mailbox
                };
                trace.max_delay = trace.max_delay.max(packet.arrival_step - packet.send_step);
                if !model.union_graph.has_edge(packet.claimed_sender, packet.receiver) {
                    trace.events.push(TraceEvent::Dropped {
                        step: k,
                        receiver: packet.receiver,
                        claimed: packet.claimed_sender,
                        origin: packet.true_origin,
                        reason: DropReason::UnknownIdentity,
                    });
                    continue;
                }
                if self.nodes[idx].mailbox.deliver(packet) && packet.is_spoofed() {
                    trace.impersonations.push(Impersonation {
                        send_step: packet.send_step,
                        arrival_step: k,
                        receiver: packet.receiver,
                        identity: packet.claimed_sender,
                        spoofer: packet.true_origin,
                        packet: packet.kind,
                    });
                }
            }

            trace.true_z.push(zs.clone());
            trace.true_x.push(x.iter().copied().collect());
            trace.estimates.push(self.nodes.iter().map(|nd| nd.estimate.clone()).collect());

            // local sensing, construction reads and filtered updates
            for (idx, nd) in self.nodes.iter_mut().enumerate() {
                let mut next = nd.estimate.clone();
                if let Some(obs) = nd.observer.as_mut() {
                    let y = model.observations[&nd.id].measure(&x);
                    obs.step(&y).map_err(|source| SimError::Observer { node: nd.id, source })?;
                    for (pos, &j) in nd.detectable.iter().enumerate() {
                        next[j] = obs.estimate[pos];
                    }
                }
                for &j in &nd.undetectable {
                    let Some(st) = nd.medag.get_mut(&j) else {
                        next[j] = lambda[j] * nd.estimate[j];
                        continue;
                    };
                    let fm = nd.follower.get_mut(&j).unwrap();
                    if !awake[idx] {
                        next[j] = if fm.tracking { lambda[j] * nd.estimate[j] } else { nd.estimate[j] };
                        continue;
                    }
                    let flags: Vec<FlagObservation> = nd
                        .mailbox
                        .slots(j, SlotKind::Flag)
                        .map(|pk| FlagObservation {
                            sender: pk.claimed_sender,
                            token: match pk.kind {
                                PacketKind::Flag { token, .. } => token,
                                PacketKind::Estimate { .. } => unreachable!("flag slot"),
                            },
                        })
                        .collect();
                    for ev in st.step(k, &flags, threshold) {
                        trace.events.push(match ev {
                            MedagEvent::Activated { parents } => {
                                TraceEvent::Activated { step: k, node: nd.id, mode: j, parents }
                            }
                            MedagEvent::Detection { identity } => {
                                TraceEvent::Detection { step: k, node: nd.id, mode: j, identity }
                            }
                        });
                    }
                    let Some(parents) = st.estimation_parents(p.estimate_before_activation) else {
                        // not estimating yet: predict open loop unless provisional filtering is on
                        fm.tracking = !p.estimate_before_activation;
                        next[j] = if fm.tracking { lambda[j] * nd.estimate[j] } else { nd.estimate[j] };
                        continue;
                    };
                    let mut slots: Vec<EstimateSlot> = parents
                        .iter()
                        .filter_map(|&q| nd.mailbox.get(q, j, SlotKind::Estimate))
                        .map(|pk| EstimateSlot {
                            sender: pk.claimed_sender,
                            value: match pk.kind {
                                PacketKind::Estimate { value, .. } => value,
                                PacketKind::Flag { .. } => unreachable!("estimate slot"),
                            },
                            sent_at: pk.send_step,
                            arrived_at: pk.arrival_step,
                            read_at: k,
                        })
                        .collect();
                    let genuine = slots.len();
                    if p.fill_missing {
                        for &q in parents {
                            if nd.mailbox.get(q, j, SlotKind::Estimate).is_none() {
                                slots.push(EstimateSlot::fresh(q, nd.estimate[j], k));
                            }
                        }
                    }
                    if static_graph {
                        for (s, pk) in slots[..genuine]
                            .iter()
                            .zip(parents.iter().filter_map(|&q| nd.mailbox.get(q, j, SlotKind::Estimate)))
                        {
                            if !pk.is_spoofed() && model.regular.contains(&pk.true_origin) {
                                trace.max_staleness = trace.max_staleness.max(s.staleness());
                            }
                        }
                    }
                    let params = FilterParams {
                        f: p.f,
                        beta: model.effective_beta,
                        lambda: lambda[j],
                        trim_override: p.trim_override,
                        delay_compensation: p.delay_compensation,
                    };
                    let out = filtered_update(&params, &slots, nd.estimate[j]);
                    next[j] = out.value;
                    fm.tracking = !out.held;
                    if out.held != fm.holding {
                        fm.holding = out.held;
                        trace.events.push(if out.held {
                            TraceEvent::Hold { step: k, node: nd.id, mode: j }
                        } else {
                            TraceEvent::Resume { step: k, node: nd.id, mode: j }
                        });
                    }
                }
                nd.estimate = next;
            }

            z = step_truth(&z, &model.diag);
            x = &model.system.a * &x;
        }

        trace.final_estimates = self.nodes.iter().map(|nd| nd.estimate.clone()).collect();
        trace.constructions = model
            .medag_modes
            .iter()
            .map(|&j| ModeConstruction {
                mode: j,
                sources: model.sources[&j].clone(),
                parents: self
                    .nodes
                    .iter()
                    .filter(|nd| nd.medag[&j].counter && !nd.medag[&j].is_source)
                    .map(|nd| (nd.id, nd.medag[&j].parents.clone()))
                    .collect(),
                activated_at: self.nodes.iter().map(|nd| (nd.id, nd.medag[&j].activated_at)).collect(),
            })
            .collect();
        Ok(trace)
    }
}

/// Runs `model` to its configured horizon.
pub fn run(model: &Model) -> Result<SimTrace, SimError> {
    Simulation::new(model)?.run()
}
