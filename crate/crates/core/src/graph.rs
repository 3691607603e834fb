//! Directed graphs and strong r-robustness checks.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::NodeId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("subset must be non-empty")]
    EmptySubset,
    #[error("source set must be non-empty")]
    EmptySourceSet,
    #[error("node {0} is not in the graph")]
    UnknownNode(NodeId),
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("{0} nodes outside the source set exceed the brute-force limit of 20")]
    TooLarge(usize),
    #[error("window {mu_bar} exceeds horizon {horizon}")]
    WindowExceedsHorizon { mu_bar: u64, horizon: u64 },
    #[error("switching intervals must start at 0 and be strictly increasing")]
    BadIntervals,
    #[error("switching graphs must share the same node set")]
    NodeSetMismatch,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DirectedGraph {
    nodes: BTreeSet<NodeId>,
    in_nbrs: BTreeMap<NodeId, BTreeSet<NodeId>>,
    out_nbrs: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl DirectedGraph {
    pub fn new(nodes: impl IntoIterator<Item = NodeId>) -> Self {
        let nodes: BTreeSet<NodeId> = nodes.into_iter().collect();
        let in_nbrs = nodes.iter().map(|&n| (n, BTreeSet::new())).collect();
        let out_nbrs = nodes.iter().map(|&n| (n, BTreeSet::new())).collect();
        Self { nodes, in_nbrs, out_nbrs }
    }

    pub fn from_edges(
        nodes: impl IntoIterator<Item = NodeId>,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self, GraphError> {
        let mut g = Self::new(nodes);
        for (from, to) in edges {
            g.add_edge(from, to)?;
        }
        Ok(g)
    }

    /// Adds the edge `from -> to` (information flows from `from` to `to`).
    pub fn add_edge(&mut self, from: NodeId, to: NodeId) -> Result<(), GraphError> {
        if from == to {
            return Err(GraphError::SelfLoop(from));
        }
        for n in [from, to] {
            if !self.nodes.contains(&n) {
                return Err(GraphError::UnknownNode(n));
            }
        }
        self.in_nbrs.get_mut(&to).unwrap().insert(from);
        self.out_nbrs.get_mut(&from).unwrap().insert(to);
        Ok(())
    }

    pub fn nodes(&self) -> &BTreeSet<NodeId> {
        &self.nodes
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.nodes.contains(&n)
    }

    pub fn has_edge(&self, from: NodeId, to: NodeId) -> bool {
        self.in_nbrs.get(&to).is_some_and(|s| s.contains(&from))
    }

    pub fn in_neighbors(&self, n: NodeId) -> &BTreeSet<NodeId> {
        &self.in_nbrs[&n]
    }

    pub fn out_neighbors(&self, n: NodeId) -> &BTreeSet<NodeId> {
        &self.out_nbrs[&n]
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.out_nbrs.iter().flat_map(|(&from, outs)| outs.iter().map(move |&to| (from, to)))
    }

    pub fn edge_count(&self) -> usize {
        self.in_nbrs.values().map(BTreeSet::len).sum()
    }

    pub fn max_in_degree(&self) -> usize {
        self.in_nbrs.values().map(BTreeSet::len).max().unwrap_or(0)
    }

    /// Edge union with another graph on the same node set.
    pub fn union(&self, other: &DirectedGraph) -> DirectedGraph {
        let mut g = self.clone();
        for (from, to) in other.edges() {
            g.add_edge(from, to).expect("graphs share nodes");
        }
        g
    }

    fn check_subset(&self, s: &BTreeSet<NodeId>) -> Result<(), GraphError> {
        match s.iter().find(|n| !self.nodes.contains(n)) {
            Some(&n) => Err(GraphError::UnknownNode(n)),
            None => Ok(()),
        }
    }
}

/// True iff some node of `c` has at least `r` in-neighbours outside `c`.
pub fn r_reachable(g: &DirectedGraph, c: &BTreeSet<NodeId>, r: usize) -> Result<bool, GraphError> {
    if c.is_empty() {
        return Err(GraphError::EmptySubset);
    }
    g.check_subset(c)?;
    Ok(c.iter().any(|&i| g.in_neighbors(i).iter().filter(|j| !c.contains(j)).count() >= r))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Certificate {
    /// Non-source nodes in the order they were accepted.
    AcceptanceOrder(Vec<NodeId>),
    /// Nodes never accepted; this set is not r-reachable.
    Residual(BTreeSet<NodeId>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobustnessVerdict {
    pub robust: bool,
    pub certificate: Certificate,
}

/// Closure check: starting from `s`, accept nodes one at a time while some
/// node has `r` accepted in-neighbours.
pub fn strongly_robust_peel(
    g: &DirectedGraph,
    s: &BTreeSet<NodeId>,
    r: usize,
) -> Result<RobustnessVerdict, GraphError> {
    if s.is_empty() {
        return Err(GraphError::EmptySourceSet);
    }
    g.check_subset(s)?;
    let mut accepted: BTreeSet<NodeId> = s.clone();
    let mut order = Vec::new();
    let mut count: BTreeMap<NodeId, usize> = g
        .nodes()
        .iter()
        .filter(|n| !accepted.contains(n))
        .map(|&n| (n, g.in_neighbors(n).intersection(&accepted).count()))
        .collect();
    loop {
        let next = count.iter().find(|(_, &c)| c >= r).map(|(&n, _)| n);
        let Some(n) = next else { break };
        count.remove(&n);
        accepted.insert(n);
        order.push(n);
        for m in g.out_neighbors(n) {
            if let Some(c) = count.get_mut(m) {
                *c += 1;
            }
        }
    }
    if count.is_empty() {
        Ok(RobustnessVerdict { robust: true, certificate: Certificate::AcceptanceOrder(order) })
    } else {
        Ok(RobustnessVerdict { robust: false, certificate: Certificate::Residual(count.into_keys().collect()) })
    }
}

/// Checks every non-empty subset of `V \ S` for r-reachability.
pub fn strongly_robust_bruteforce(g: &DirectedGraph, s: &BTreeSet<NodeId>, r: usize) -> Result<bool, GraphError> {
    g.check_subset(s)?;
    let rest: Vec<NodeId> = g.nodes().iter().filter(|n| !s.contains(n)).copied().collect();
    if rest.len() > 20 {
        return Err(GraphError::TooLarge(rest.len()));
    }
    for mask in 1u32..(1u32 << rest.len()) {
        let c: BTreeSet<NodeId> =
            rest.iter().enumerate().filter(|(b, _)| mask & (1 << b) != 0).map(|(_, &n)| n).collect();
        if !r_reachable(g, &c, r)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Largest r for which `g` is strongly r-robust w.r.t. `s` (0 if none).
pub fn max_strong_robustness(g: &DirectedGraph, s: &BTreeSet<NodeId>) -> Result<usize, GraphError> {
    if s.is_empty() {
        return Err(GraphError::EmptySourceSet);
    }
    for r in (1..=g.max_in_degree()).rev() {
        if strongly_robust_peel(g, s, r)?.robust {
            return Ok(r);
        }
    }
    Ok(0)
}

/// Piecewise-constant graph sequence; interval `i` is active from its start
/// step until the next interval's start.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimeVaryingGraph {
    intervals: Vec<(u64, DirectedGraph)>,
}

impl TimeVaryingGraph {
    pub fn new(intervals: Vec<(u64, DirectedGraph)>) -> Result<Self, GraphError> {
        if intervals.first().map(|(s, _)| *s) != Some(0) || intervals.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(GraphError::BadIntervals);
        }
        let v = intervals[0].1.nodes();
        if intervals.iter().any(|(_, g)| g.nodes() != v) {
            return Err(GraphError::NodeSetMismatch);
        }
        Ok(Self { intervals })
    }

    pub fn constant(g: DirectedGraph) -> Self {
        Self { intervals: vec![(0, g)] }
    }

    pub fn intervals(&self) -> &[(u64, DirectedGraph)] {
        &self.intervals
    }

    pub fn nodes(&self) -> &BTreeSet<NodeId> {
        self.intervals[0].1.nodes()
    }

    fn index_at(&self, step: u64) -> usize {
        self.intervals.partition_point(|(s, _)| *s <= step) - 1
    }

    pub fn at(&self, step: u64) -> &DirectedGraph {
        &self.intervals[self.index_at(step)].1
    }

    /// Edge union of `G[k - mu_bar] .. G[k]` (steps below 0 are skipped).
    pub fn window_union(&self, k: u64, mu_bar: u64) -> DirectedGraph {
        let lo = self.index_at(k.saturating_sub(mu_bar));
        let hi = self.index_at(k);
        let mut g = self.intervals[lo].1.clone();
        for (_, other) in &self.intervals[lo + 1..=hi] {
            g = g.union(other);
        }
        g
    }

    /// Edge union over all intervals.
    pub fn union_all(&self) -> DirectedGraph {
        let mut g = self.intervals[0].1.clone();
        for (_, other) in &self.intervals[1..] {
            g = g.union(other);
        }
        g
    }

    /// Steps at which the window union can change within `[mu_bar, horizon]`.
    fn distinct_windows(&self, mu_bar: u64, horizon: u64) -> Vec<u64> {
        let mut ks: BTreeSet<u64> = BTreeSet::new();
        ks.insert(mu_bar);
        for &(start, _) in &self.intervals {
            // an interval enters the window at k = start and its predecessor
            // leaves at k = start + mu_bar
            for k in [start, start + mu_bar] {
                if k >= mu_bar && k <= horizon {
                    ks.insert(k);
                }
            }
        }
        ks.into_iter().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointVerdict {
    pub robust: bool,
    /// First window end step whose union fails the check.
    pub failing_step: Option<u64>,
    /// Whether `mu_bar <= k_bar`, when `k_bar` was supplied.
    pub window_within_kbar: Option<bool>,
}

pub fn jointly_strongly_robust(
    tv: &TimeVaryingGraph,
    s: &BTreeSet<NodeId>,
    r: usize,
    mu_bar: u64,
    horizon: u64,
    k_bar: Option<u64>,
) -> Result<JointVerdict, GraphError> {
    if horizon < mu_bar {
        return Err(GraphError::WindowExceedsHorizon { mu_bar, horizon });
    }
    let mut failing_step = None;
    for k in tv.distinct_windows(mu_bar, horizon) {
        if !strongly_robust_peel(&tv.window_union(k, mu_bar), s, r)?.robust {
            failing_step = Some(k);
            break;
        }
    }
    Ok(JointVerdict { robust: failing_step.is_none(), failing_step, window_within_kbar: k_bar.map(|kb| mu_bar <= kb) })
}

/// Smallest `max_strong_robustness` over all window unions in `[mu_bar, horizon]`.
pub fn max_joint_robustness(
    tv: &TimeVaryingGraph,
    s: &BTreeSet<NodeId>,
    mu_bar: u64,
    horizon: u64,
) -> Result<usize, GraphError> {
    if horizon < mu_bar {
        return Err(GraphError::WindowExceedsHorizon { mu_bar, horizon });
    }
    let mut best = usize::MAX;
    for k in tv.distinct_windows(mu_bar, horizon) {
        best = best.min(max_strong_robustness(&tv.window_union(k, mu_bar), s)?);
    }
    Ok(best)
}
