//! Packets and last-write-wins mailboxes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::NodeId;

/// Token carried by a valid construction flag.
pub const CHI: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PacketKind {
    /// Construction-phase flag for `mode`; only `token == CHI` is valid.
    Flag {
        mode: usize,
        token: u32,
    },
    Estimate {
        mode: usize,
        value: f64,
    },
}

impl PacketKind {
    pub fn mode(&self) -> usize {
        match *self {
            PacketKind::Flag { mode, .. } | PacketKind::Estimate { mode, .. } => mode,
        }
    }

    pub fn slot(&self) -> SlotKind {
        match self {
            PacketKind::Flag { .. } => SlotKind::Flag,
            PacketKind::Estimate { .. } => SlotKind::Estimate,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Flag,
    Estimate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub claimed_sender: NodeId,
    /// Ground truth, never consulted by receivers.
    pub true_origin: NodeId,
    pub receiver: NodeId,
    pub kind: PacketKind,
    pub send_step: u64,
    pub arrival_step: u64,
    pub arrival_seq: u64,
}

impl Packet {
    pub fn is_spoofed(&self) -> bool {
        self.claimed_sender != self.true_origin
    }

    fn order(&self) -> (u64, u64) {
        (self.arrival_step, self.arrival_seq)
    }
}

/// Key of one mailbox slot: claimed identity, mode and packet kind.
pub type SlotKey = (NodeId, usize, SlotKind);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mailbox {
    slots: BTreeMap<SlotKey, Packet>,
}

impl Mailbox {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `packet` unless a later-arrived packet already holds its slot.
    /// Returns whether the slot changed.
    pub fn deliver(&mut self, packet: Packet) -> bool {
        let key = (packet.claimed_sender, packet.kind.mode(), packet.kind.slot());
        match self.slots.get(&key) {
            Some(old) if old.order() >= packet.order() => false,
            _ => {
                self.slots.insert(key, packet);
                true
            }
        }
    }

    pub fn get(&self, sender: NodeId, mode: usize, kind: SlotKind) -> Option<&Packet> {
        self.slots.get(&(sender, mode, kind))
    }

    /// Occupied slots of one kind and mode, in sender order.
    pub fn slots(&self, mode: usize, kind: SlotKind) -> impl Iterator<Item = &Packet> + '_ {
        self.slots.iter().filter(move |((_, m, k), _)| *m == mode && *k == kind).map(|(_, p)| p)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(claimed: NodeId, origin: NodeId, value: f64, sent: u64, arr: u64, seq: u64) -> Packet {
        Packet {
            claimed_sender: claimed,
            true_origin: origin,
            receiver: 9,
            kind: PacketKind::Estimate { mode: 0, value },
            send_step: sent,
            arrival_step: arr,
            arrival_seq: seq,
        }
    }

    fn read(mb: &Mailbox) -> f64 {
        match mb.get(1, 0, SlotKind::Estimate).unwrap().kind {
            PacketKind::Estimate { value, .. } => value,
            _ => unreachable!(),
        }
    }

    #[test]
    fn spoof_after_genuine_wins() {
        let mut mb = Mailbox::new();
        mb.deliver(est(1, 1, 10.0, 1, 3, 0));
        mb.deliver(est(1, 14, 30.0, 3, 4, 0));
        assert_eq!(read(&mb), 30.0);
    }

    #[test]
    fn spoof_before_genuine_loses() {
        let mut mb = Mailbox::new();
        mb.deliver(est(1, 14, 30.0, 1, 2, 0));
        mb.deliver(est(1, 1, 10.0, 1, 3, 0));
        assert_eq!(read(&mb), 10.0);
    }

    #[test]
    fn later_genuine_retained() {
        let mut mb = Mailbox::new();
        mb.deliver(est(1, 1, 3.0, 3, 3, 0));
        mb.deliver(est(1, 1, 5.0, 5, 5, 0));
        assert!(!mb.deliver(est(1, 1, 4.0, 4, 4, 7)));
        assert_eq!(read(&mb), 5.0);
    }

    #[test]
    fn kinds_and_modes_use_separate_slots() {
        let mut mb = Mailbox::new();
        mb.deliver(est(1, 1, 3.0, 0, 0, 0));
        let mut flag = est(1, 1, 0.0, 0, 0, 1);
        flag.kind = PacketKind::Flag { mode: 0, token: CHI };
        mb.deliver(flag);
        let mut other = est(1, 1, 8.0, 0, 0, 2);
        other.kind = PacketKind::Estimate { mode: 1, value: 8.0 };
        mb.deliver(other);
        assert_eq!(mb.len(), 3);
        assert_eq!(read(&mb), 3.0);
        assert_eq!(mb.slots(0, SlotKind::Flag).count(), 1);
    }
}
