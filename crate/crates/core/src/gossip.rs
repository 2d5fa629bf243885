//! Distributed mode (interface enclaves gossiping owner records) and P2P mode
//! (owner-hosted combined enclaves, flooded campaigns, one owner per CPU).

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attest::CpuIdentity;
use crate::simnet::SimRng;

pub type NodeId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Centralized,
    Distributed,
    P2p,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Interface,
    Service,
    Payment,
    /// P2P node running service and payment roles for its owner.
    Combined,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("edge references unknown node {0}")]
    UnknownNode(NodeId),
    #[error("interface node {0} lacks a service or payment neighbor")]
    IsolatedInterface(NodeId),
    #[error("p2p node {0} is not a combined node")]
    NotCombined(NodeId),
    #[error("self loop at {0}")]
    SelfLoop(NodeId),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub mode: Mode,
    pub nodes: BTreeMap<NodeId, NodeKind>,
    /// Undirected, stored with the smaller id first.
    pub edges: BTreeSet<(NodeId, NodeId)>,
}

impl Topology {
    pub fn new(mode: Mode) -> Self {
        Topology { mode, nodes: BTreeMap::new(), edges: BTreeSet::new() }
    }

    pub fn add_node(&mut self, id: NodeId, kind: NodeKind) {
        self.nodes.insert(id, kind);
    }

    pub fn add_edge(&mut self, a: NodeId, b: NodeId) {
        self.edges.insert((a.min(b), a.max(b)));
    }

    /// `n` interface nodes in a line.
    pub fn line(n: u32) -> Self {
        let mut t = Topology::new(Mode::Distributed);
        for i in 0..n {
            t.add_node(i, NodeKind::Interface);
            if i > 0 {
                t.add_edge(i - 1, i);
            }
        }
        t
    }

    /// Random connected graph of `n` nodes of `kind`: a random spanning
    /// tree plus `extra` random edges.
    pub fn random_connected(n: u32, extra: usize, kind: NodeKind, mode: Mode, rng: &mut SimRng) -> Self {
        let mut t = Topology::new(mode);
        for i in 0..n {
            t.add_node(i, kind);
            if i > 0 {
                let parent = rng.0.random_range(0..i);
                t.add_edge(parent, i);
            }
        }
        if n > 1 {
            for _ in 0..extra {
                let a = rng.0.random_range(0..n);
                let b = rng.0.random_range(0..n);
                if a != b {
                    t.add_edge(a, b);
                }
            }
        }
        t
    }

    pub fn neighbors(&self, n: NodeId) -> Vec<NodeId> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == n {
                    Some(b)
                } else if b == n {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn nodes_of(&self, kind: NodeKind) -> Vec<NodeId> {
        self.nodes.iter().filter(|(_, k)| **k == kind).map(|(i, _)| *i).collect()
    }

    /// Nodes that take part in gossip or flooding.
    fn peers(&self) -> Vec<NodeId> {
        match self.mode {
            Mode::P2p => self.nodes_of(NodeKind::Combined),
            _ => self.nodes_of(NodeKind::Interface),
        }
    }

    fn peer_neighbors(&self, n: NodeId) -> Vec<NodeId> {
        let kind = self.nodes.get(&n).copied();
        self.neighbors(n).into_iter().filter(|m| self.nodes.get(m).copied() == kind).collect()
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        for &(a, b) in &self.edges {
            for n in [a, b] {
                if !self.nodes.contains_key(&n) {
                    return Err(TopologyError::UnknownNode(n));
                }
            }
            if a == b {
                return Err(TopologyError::SelfLoop(a));
            }
        }
        match self.mode {
            Mode::Centralized => {}
            Mode::Distributed => {
                for n in self.nodes_of(NodeKind::Interface) {
                    let kinds: BTreeSet<NodeKind> =
                        self.neighbors(n).iter().filter_map(|m| self.nodes.get(m).copied()).collect();
                    if !kinds.contains(&NodeKind::Service) || !kinds.contains(&NodeKind::Payment) {
                        return Err(TopologyError::IsolatedInterface(n));
                    }
                }
            }
            Mode::P2p => {
                if let Some((n, _)) = self.nodes.iter().find(|(_, k)| **k != NodeKind::Combined) {
                    return Err(TopologyError::NotCombined(*n));
                }
            }
        }
        Ok(())
    }

    /// Hop distances from `src` over peer edges.
    pub fn bfs(&self, src: NodeId) -> BTreeMap<NodeId, u32> {
        let mut dist = BTreeMap::from([(src, 0)]);
        let mut q = VecDeque::from([src]);
        while let Some(n) = q.pop_front() {
            let d = dist[&n];
            for m in self.peer_neighbors(n) {
                if let Entry::Vacant(e) = dist.entry(m) {
                    e.insert(d + 1);
                    q.push_back(m);
                }
            }
        }
        dist
    }

    /// Largest finite distance between peers; `None` if partitioned.
    pub fn diameter(&self) -> Option<u32> {
        let peers = self.peers();
        let mut best = 0;
        for &p in &peers {
            let d = self.bfs(p);
            if d.len() != peers.len() {
                return None;
            }
            best = best.max(d.values().copied().max().unwrap_or(0));
        }
        Some(best)
    }

    pub fn components(&self) -> Vec<BTreeSet<NodeId>> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for p in self.peers() {
            if seen.contains(&p) {
                continue;
            }
            let c: BTreeSet<NodeId> = self.bfs(p).into_keys().collect();
            seen.extend(c.iter().copied());
            out.push(c);
        }
        out
    }
}

/// Per-node knowledge of enrolled owners.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GossipState {
    pub known: BTreeMap<NodeId, BTreeSet<u32>>,
    /// Records learned but not yet forwarded.
    pub fresh: BTreeMap<NodeId, BTreeSet<u32>>,
    pub batch_size: usize,
}

/// Traffic of one round.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundStats {
    pub messages: usize,
    pub records_sent: usize,
    pub newly_learned: usize,
}

impl GossipState {
    pub fn new(topology: &Topology, batch_size: usize) -> Self {
        let nodes = topology.peers();
        GossipState {
            known: nodes.iter().map(|n| (*n, BTreeSet::new())).collect(),
            fresh: nodes.iter().map(|n| (*n, BTreeSet::new())).collect(),
            batch_size: batch_size.max(1),
        }
    }

    pub fn enroll(&mut self, node: NodeId, owner: u32) {
        if self.known.entry(node).or_default().insert(owner) {
            self.fresh.entry(node).or_default().insert(owner);
        }
    }

    pub fn knows(&self, node: NodeId, owner: u32) -> bool {
        self.known.get(&node).is_some_and(|k| k.contains(&owner))
    }
}

/// One synchronous round: every node sends up to `batch_size` of its fresh
/// records to each neighbor; receivers merge.
pub fn gossip_round(topology: &Topology, state: &GossipState) -> (GossipState, RoundStats) {
    let mut next = state.clone();
    let mut stats = RoundStats::default();
    let mut inbox: BTreeMap<NodeId, BTreeSet<u32>> = BTreeMap::new();
    for (&n, fresh) in &state.fresh {
        if fresh.is_empty() {
            continue;
        }
        let batch: Vec<u32> = fresh.iter().take(state.batch_size).copied().collect();
        debug_assert!(batch.iter().all(|o| state.knows(n, *o)));
        let f = next.fresh.get_mut(&n).expect("node present");
        for o in &batch {
            f.remove(o);
        }
        for m in topology.peer_neighbors(n) {
            stats.messages += 1;
            stats.records_sent += batch.len();
            inbox.entry(m).or_default().extend(batch.iter().copied());
        }
    }
    for (m, recs) in inbox {
        for o in recs {
            if next.known.entry(m).or_default().insert(o) {
                next.fresh.entry(m).or_default().insert(o);
                stats.newly_learned += 1;
            }
        }
    }
    (next, stats)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum P2pError {
    #[error("{cpu:?} already bound to owner {owner}")]
    CpuAlreadyBound { cpu: CpuIdentity, owner: u32 },
    #[error("node {0} already hosts an owner")]
    NodeOccupied(NodeId),
    #[error("no compliant nodes")]
    NoCompliantNodes,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct P2pRegistration {
    pub owner: u32,
    pub cpu: CpuIdentity,
    pub node: NodeId,
}

/// Result of flooding one campaign.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Fulfillment {
    /// `(node, owner)` in execution order.
    pub executed: Vec<(NodeId, u32)>,
    pub reached: usize,
    pub flood_messages: usize,
    pub duplicates_dropped: usize,
}

/// P2P network state. Registrations are gossiped; the map here is the
/// converged network-wide view.
#[derive(Clone, Debug)]
pub struct P2pNet {
    pub topology: Topology,
    by_cpu: BTreeMap<CpuIdentity, P2pRegistration>,
    by_node: BTreeMap<NodeId, u32>,
    seen: BTreeMap<NodeId, BTreeSet<u32>>,
}

impl P2pNet {
    pub fn new(topology: Topology) -> Self {
        P2pNet { topology, by_cpu: BTreeMap::new(), by_node: BTreeMap::new(), seen: BTreeMap::new() }
    }

    pub fn register_owner_p2p(&mut self, node: NodeId, owner: u32, cpu: CpuIdentity) -> Result<(), P2pError> {
        if !self.topology.nodes.contains_key(&node) {
            return Err(P2pError::UnknownNode(node));
        }
        if let Some(r) = self.by_cpu.get(&cpu) {
            return if r.owner == owner && r.node == node {
                Ok(())
            } else {
                Err(P2pError::CpuAlreadyBound { cpu, owner: r.owner })
            };
        }
        if self.by_node.contains_key(&node) {
            return Err(P2pError::NodeOccupied(node));
        }
        self.by_cpu.insert(cpu, P2pRegistration { owner, cpu, node });
        self.by_node.insert(node, owner);
        Ok(())
    }

    pub fn registrations(&self) -> impl Iterator<Item = &P2pRegistration> {
        self.by_cpu.values()
    }

    pub fn owner_at(&self, node: NodeId) -> Option<u32> {
        self.by_node.get(&node).copied()
    }

    /// Delivers a flood message; true the first time `node` sees `campaign`.
    pub fn deliver_flood(&mut self, node: NodeId, campaign: u32) -> bool {
        self.seen.entry(node).or_default().insert(campaign)
    }

    /// Floods `campaign` from `entry`. Reached nodes whose owner is
    /// compliant execute one slot each, in flood order, until `count`.
    pub fn p2p_broadcast_campaign(
        &mut self,
        entry: NodeId,
        campaign: u32,
        count: u32,
        execute: &mut dyn FnMut(NodeId, u32) -> bool,
    ) -> Result<Fulfillment, P2pError> {
        if !self.topology.nodes.contains_key(&entry) {
            return Err(P2pError::UnknownNode(entry));
        }
        let mut f = Fulfillment::default();
        let mut q = VecDeque::from([entry]);
        let mut order = Vec::new();
        while let Some(n) = q.pop_front() {
            if !self.deliver_flood(n, campaign) {
                f.duplicates_dropped += 1;
                continue;
            }
            order.push(n);
            for m in self.topology.peer_neighbors(n) {
                f.flood_messages += 1;
                q.push_back(m);
            }
        }
        f.reached = order.len();
        let mut any_compliant = false;
        for n in order {
            if f.executed.len() as u32 >= count {
                break;
            }
            if let Some(owner) = self.owner_at(n) {
                if execute(n, owner) {
                    any_compliant = true;
                    f.executed.push((n, owner));
                }
            }
        }
        if !any_compliant && count > 0 {
            return Err(P2pError::NoCompliantNodes);
        }
        Ok(f)
    }
}
