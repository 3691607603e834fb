//! Distributed mode-estimation DAG construction, verification and motifs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::DirectedGraph;
use crate::sim::mailbox::CHI;
use crate::NodeId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MedagError {
    #[error("parent graph contains a cycle through {0:?}")]
    CycleDetected(Vec<NodeId>),
    #[error("node {0} never activated")]
    Unterminated(NodeId),
    #[error("node {node} has {have} parents, need {need}")]
    InsufficientParents { node: NodeId, have: usize, need: usize },
    #[error("node {node} has {suspects} suspect parents, more than the budget {budget}")]
    TooManySuspects { node: NodeId, suspects: usize, budget: usize },
}

/// Parents a follower must collect before activating.
pub fn activation_threshold(f: usize, beta: usize) -> usize {
    2 * (beta + 1) * f + 1
}

/// Upper bound on the construction time of one mode.
pub fn kbar_bound(l_bar: u64, k_bar: u64, tau_bar: u64, beta: u64) -> u64 {
    assert!(k_bar >= 1, "k_bar must be positive");
    let eta = beta * (tau_bar.saturating_sub(k_bar) / k_bar);
    l_bar * ((eta + 1) * k_bar + tau_bar + 1)
}

/// A flag read from one identity's mailbox slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlagObservation {
    pub sender: NodeId,
    pub token: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MedagEvent {
    Activated {
        parents: BTreeSet<NodeId>,
    },
    /// An identity delivered something other than the valid flag.
    Detection {
        identity: NodeId,
    },
}

/// Per-node, per-mode construction state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedagNodeState {
    pub mode: usize,
    pub is_source: bool,
    pub counter: bool,
    pub parents: BTreeSet<NodeId>,
    pub received: BTreeSet<NodeId>,
    pub activated_at: Option<u64>,
    flagged: BTreeSet<NodeId>,
}

impl MedagNodeState {
    /// Sources start active with no parents.
    pub fn new(mode: usize, is_source: bool) -> Self {
        Self {
            mode,
            is_source,
            counter: is_source,
            parents: BTreeSet::new(),
            received: BTreeSet::new(),
            activated_at: is_source.then_some(0),
            flagged: BTreeSet::new(),
        }
    }

    /// Processes the flags visible at one read.
    pub fn step(&mut self, step: u64, inbox: &[FlagObservation], threshold: usize) -> Vec<MedagEvent> {
        let mut events = Vec::new();
        for obs in inbox {
            if obs.token == CHI {
                if !self.counter {
                    self.received.insert(obs.sender);
                }
            } else if self.flagged.insert(obs.sender) {
                events.push(MedagEvent::Detection { identity: obs.sender });
            }
        }
        if !self.counter && self.received.len() >= threshold {
            self.counter = true;
            self.parents = self.received.clone();
            self.activated_at = Some(step);
            events.push(MedagEvent::Activated { parents: self.parents.clone() });
        }
        events
    }

    /// Parent set for filtering: frozen parents once active, otherwise the
    /// identities counted so far when `provisional` is set.
    pub fn estimation_parents(&self, provisional: bool) -> Option<&BTreeSet<NodeId>> {
        if self.counter {
            Some(&self.parents)
        } else if provisional && !self.received.is_empty() {
            Some(&self.received)
        } else {
            None
        }
    }
}

/// Recorded outcome of the construction for one mode.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeConstruction {
    pub mode: usize,
    pub sources: BTreeSet<NodeId>,
    pub parents: BTreeMap<NodeId, BTreeSet<NodeId>>,
    pub activated_at: BTreeMap<NodeId, Option<u64>>,
}

impl ModeConstruction {
    pub fn terminated(&self) -> bool {
        self.activated_at.values().all(Option::is_some)
    }

    pub fn termination_step(&self) -> Option<u64> {
        if self.terminated() {
            Some(self.activated_at.values().flatten().copied().max().unwrap_or(0))
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layering {
    pub layer: BTreeMap<NodeId, usize>,
    pub longest_path: usize,
}

impl Layering {
    pub fn layers(&self) -> Vec<Vec<NodeId>> {
        let mut out = vec![Vec::new(); self.longest_path + 1];
        for (&n, &l) in &self.layer {
            out[l].push(n);
        }
        out
    }
}

/// Finds a cycle in the regular-parent graph, if any.
fn find_cycle(parents: &BTreeMap<NodeId, BTreeSet<NodeId>>, regular: &BTreeSet<NodeId>) -> Option<Vec<NodeId>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Done,
    }
    let mut marks: BTreeMap<NodeId, Mark> = BTreeMap::new();
    for &start in parents.keys() {
        if marks.contains_key(&start) {
            continue;
        }
        // iterative DFS over regular parent edges
        let mut stack: Vec<(NodeId, Vec<NodeId>)> = Vec::new();
        let kids = |n: NodeId| -> Vec<NodeId> {
            parents.get(&n).map(|p| p.iter().filter(|q| regular.contains(q)).copied().collect()).unwrap_or_default()
        };
        marks.insert(start, Mark::Open);
        stack.push((start, kids(start)));
        while let Some((node, pending)) = stack.last_mut() {
            let node = *node;
            match pending.pop() {
                Some(next) => match marks.get(&next) {
                    Some(Mark::Open) => {
                        let pos = stack.iter().position(|(n, _)| *n == next).unwrap();
                        return Some(stack[pos..].iter().map(|(n, _)| *n).collect());
                    }
                    Some(Mark::Done) => {}
                    None => {
                        marks.insert(next, Mark::Open);
                        stack.push((next, kids(next)));
                    }
                },
                None => {
                    marks.insert(node, Mark::Done);
                    stack.pop();
                }
            }
        }
    }
    None
}

/// Layer of every regular node: 0 for sources, otherwise one more than the
/// deepest regular parent.
pub fn assign_layers(
    parents: &BTreeMap<NodeId, BTreeSet<NodeId>>,
    sources: &BTreeSet<NodeId>,
    regular: &BTreeSet<NodeId>,
) -> Result<Layering, MedagError> {
    if let Some(cycle) = find_cycle(parents, regular) {
        return Err(MedagError::CycleDetected(cycle));
    }
    for n in regular {
        if !sources.contains(n) && !parents.contains_key(n) {
            return Err(MedagError::Unterminated(*n));
        }
    }
    let mut layer: BTreeMap<NodeId, usize> = BTreeMap::new();
    fn visit(
        n: NodeId,
        parents: &BTreeMap<NodeId, BTreeSet<NodeId>>,
        sources: &BTreeSet<NodeId>,
        regular: &BTreeSet<NodeId>,
        layer: &mut BTreeMap<NodeId, usize>,
    ) -> usize {
        if let Some(&l) = layer.get(&n) {
            return l;
        }
        let l = if sources.contains(&n) {
            0
        } else {
            let deepest = parents[&n]
                .iter()
                .filter(|p| regular.contains(p))
                .map(|&p| visit(p, parents, sources, regular, layer))
                .max()
                .unwrap_or(0);
            deepest + 1
        };
        layer.insert(n, l);
        l
    }
    for &n in regular {
        visit(n, parents, sources, regular, &mut layer);
    }
    let longest_path = layer.values().copied().max().unwrap_or(0);
    Ok(Layering { layer, longest_path })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    TooFewParents { node: NodeId, have: usize, need: usize },
    ParentNotNeighbor { node: NodeId, parent: NodeId },
    Cycle { nodes: Vec<NodeId> },
    LayerOrder { node: NodeId, parent: NodeId },
    Unterminated { node: NodeId },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedagReport {
    pub mode: usize,
    pub terminated: bool,
    pub termination_step: Option<u64>,
    pub layers: Vec<Vec<NodeId>>,
    pub longest_path: usize,
    pub violations: Vec<Violation>,
}

/// Checks the recorded construction against the DAG properties.
pub fn verify_srmedag(
    g: &DirectedGraph,
    construction: &ModeConstruction,
    regular: &BTreeSet<NodeId>,
    f: usize,
    beta: usize,
) -> MedagReport {
    let need = activation_threshold(f, beta);
    let sources: BTreeSet<NodeId> = construction.sources.intersection(regular).copied().collect();
    let mut violations = Vec::new();
    for &n in regular {
        if sources.contains(&n) {
            continue;
        }
        match construction.parents.get(&n) {
            None => violations.push(Violation::Unterminated { node: n }),
            Some(ps) => {
                if ps.len() < need {
                    violations.push(Violation::TooFewParents { node: n, have: ps.len(), need });
                }
                for &p in ps {
                    if !g.has_edge(p, n) {
                        violations.push(Violation::ParentNotNeighbor { node: n, parent: p });
                    }
                }
            }
        }
    }
    let followers: BTreeMap<NodeId, BTreeSet<NodeId>> = construction
        .parents
        .iter()
        .filter(|(n, _)| regular.contains(n) && !sources.contains(n))
        .map(|(n, p)| (*n, p.clone()))
        .collect();
    let (layers, longest_path) = match find_cycle(&followers, regular) {
        Some(nodes) => {
            violations.push(Violation::Cycle { nodes });
            (Vec::new(), 0)
        }
        None => {
            let active: BTreeSet<NodeId> =
                regular.iter().filter(|n| sources.contains(n) || followers.contains_key(n)).copied().collect();
            let layering = assign_layers(&followers, &sources, &active).expect("acyclic and complete");
            for (&n, ps) in &followers {
                for p in ps.iter().filter(|p| regular.contains(p)) {
                    let ok = layering.layer.get(p).is_some_and(|lp| *lp < layering.layer[&n]);
                    if !ok {
                        violations.push(Violation::LayerOrder { node: n, parent: *p });
                    }
                }
            }
            (layering.layers(), layering.longest_path)
        }
    };
    let terminated =
        regular.iter().all(|n| sources.contains(n) || construction.activated_at.get(n).is_some_and(Option::is_some));
    let termination_step = terminated
        .then(|| regular.iter().filter_map(|n| construction.activated_at.get(n).copied().flatten()).max().unwrap_or(0));
    MedagReport { mode: construction.mode, terminated, termination_step, layers, longest_path, violations }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuspectKind {
    Spoofer,
    Impersonated,
    /// A regular parent counted against the budget as a worst case.
    Potential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Motif {
    pub center: NodeId,
    pub mode: usize,
    pub independent: NodeId,
    pub common: NodeId,
    pub suspect: NodeId,
    pub suspect_kind: SuspectKind,
}

/// Splits the parents of `center` into suspects, one common parent and
/// independent parents, and pairs suspects with independent parents.
pub fn enumerate_motifs(
    center: NodeId,
    mode: usize,
    parents: &BTreeSet<NodeId>,
    impersonated: &BTreeSet<NodeId>,
    adversaries: &BTreeSet<NodeId>,
    f: usize,
    beta: usize,
) -> Result<Vec<Motif>, MedagError> {
    let need = activation_threshold(f, beta);
    if parents.len() < need {
        return Err(MedagError::InsufficientParents { node: center, have: parents.len(), need });
    }
    let budget = (beta + 1) * f;
    let mut suspects: Vec<(NodeId, SuspectKind)> =
        parents.iter().filter(|p| adversaries.contains(p)).map(|&p| (p, SuspectKind::Spoofer)).collect();
    suspects.extend(
        parents
            .iter()
            .filter(|p| !adversaries.contains(p) && impersonated.contains(p))
            .map(|&p| (p, SuspectKind::Impersonated)),
    );
    if suspects.len() > budget {
        return Err(MedagError::TooManySuspects { node: center, suspects: suspects.len(), budget });
    }
    let taken: BTreeSet<NodeId> = suspects.iter().map(|s| s.0).collect();
    let mut clean: Vec<NodeId> = parents.iter().filter(|p| !taken.contains(p)).copied().collect();
    while suspects.len() < budget {
        let p = clean.pop().expect("enough parents");
        suspects.push((p, SuspectKind::Potential));
    }
    // clean now holds at least budget + 1 un-impersonated regular parents
    let common = clean[0];
    let independent = &clean[1..];
    Ok(suspects
        .iter()
        .zip(independent)
        .map(|(&(suspect, suspect_kind), &p)| Motif { center, mode, independent: p, common, suspect, suspect_kind })
        .collect())
}
