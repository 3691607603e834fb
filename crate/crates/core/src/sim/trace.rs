//! Recorded output of a simulation run.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::medag::ModeConstruction;
use crate::sim::mailbox::PacketKind;
use crate::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// The physical link does not exist at the send step.
    NoSuchEdge,
    /// The claimed identity is not an in-neighbour of the receiver.
    UnknownIdentity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Activated {
        step: u64,
        node: NodeId,
        mode: usize,
        parents: BTreeSet<NodeId>,
    },
    Detection {
        step: u64,
        node: NodeId,
        mode: usize,
        identity: NodeId,
    },
    /// A follower's retained set became empty and it started holding.
    Hold {
        step: u64,
        node: NodeId,
        mode: usize,
    },
    /// A holding follower resumed filtering.
    Resume {
        step: u64,
        node: NodeId,
        mode: usize,
    },
    Emission {
        step: u64,
        spoofer: NodeId,
        identity: NodeId,
        targets: Vec<NodeId>,
        packet: PacketKind,
        delay: u64,
    },
    Dropped {
        step: u64,
        receiver: NodeId,
        claimed: NodeId,
        origin: NodeId,
        reason: DropReason,
    },
}

impl TraceEvent {
    pub fn step(&self) -> u64 {
        match *self {
            TraceEvent::Activated { step, .. }
            | TraceEvent::Detection { step, .. }
            | TraceEvent::Hold { step, .. }
            | TraceEvent::Resume { step, .. }
            | TraceEvent::Emission { step, .. }
            | TraceEvent::Dropped { step, .. } => step,
        }
    }
}

/// A spoofed packet that reached a receiver's mailbox.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Impersonation {
    pub send_step: u64,
    pub arrival_step: u64,
    pub receiver: NodeId,
    pub identity: NodeId,
    pub spoofer: NodeId,
    pub packet: PacketKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceParams {
    pub f: usize,
    pub beta: usize,
    pub k_bar: u64,
    pub tau_bar: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub config_hash: String,
    pub seed: u64,
    pub horizon: u64,
    pub params: TraceParams,
    pub eigenvalues: Vec<f64>,
    pub regular: Vec<NodeId>,
    pub spoofers: Vec<NodeId>,
    /// Modes handled by construction and filtering.
    pub medag_modes: Vec<usize>,
    /// `true_z[k][j]`
    pub true_z: Vec<Vec<f64>>,
    pub true_x: Vec<Vec<f64>>,
    /// `estimates[k][node index][j]`, node index into `regular`.
    pub estimates: Vec<Vec<Vec<f64>>>,
    /// Estimates after the last step.
    pub final_estimates: Vec<Vec<f64>>,
    pub events: Vec<TraceEvent>,
    pub constructions: Vec<ModeConstruction>,
    pub impersonations: Vec<Impersonation>,
    pub awake: BTreeMap<NodeId, Vec<u64>>,
    /// Largest arrival minus send step over delivered packets.
    pub max_delay: u64,
    /// Largest read minus send step over genuine slots used in filtering.
    pub max_staleness: u64,
}

impl SimTrace {
    pub fn node_index(&self, node: NodeId) -> Option<usize> {
        self.regular.iter().position(|&n| n == node)
    }

    pub fn error(&self, step: usize, node_idx: usize, mode: usize) -> f64 {
        self.estimates[step][node_idx][mode] - self.true_z[step][mode]
    }

    pub fn max_error(&self, step: usize, mode: usize) -> f64 {
        (0..self.regular.len()).map(|i| self.error(step, i, mode).abs()).fold(0.0, f64::max)
    }

    /// Estimate of one node for one mode over the whole run.
    pub fn estimate_series(&self, node: NodeId, mode: usize) -> Vec<f64> {
        let i = self.node_index(node).expect("regular node");
        self.estimates.iter().map(|row| row[i][mode]).collect()
    }

    pub fn error_series(&self, node: NodeId, mode: usize) -> Vec<f64> {
        let i = self.node_index(node).expect("regular node");
        (0..self.estimates.len()).map(|k| self.error(k, i, mode)).collect()
    }

    pub fn construction(&self, mode: usize) -> Option<&ModeConstruction> {
        self.constructions.iter().find(|c| c.mode == mode)
    }

    /// Identities spoofed towards `node` with send steps in the `k_bar`
    /// steps ending at `end`.
    pub fn impersonated_towards(&self, node: NodeId, end: u64) -> BTreeSet<NodeId> {
        let start = (end + 1).saturating_sub(self.params.k_bar);
        self.impersonations
            .iter()
            .filter(|im| im.receiver == node && im.send_step >= start && im.send_step <= end)
            .map(|im| im.identity)
            .collect()
    }
}
