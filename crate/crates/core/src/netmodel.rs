//! Physical networks, overlays, and tunnel threshold constants.
//!
//! A physical network is a directed graph with integer link capacities
//! (packets per slot). An overlay designates a subset of nodes as routers
//! and assigns at most one tunnel to each ordered router pair: an acyclic
//! physical path whose interior nodes are forwarders. Each tunnel carries
//! three capacities — the first (input) link capacity, and the min/max
//! capacity over *all* of its links, input link included — plus a derived
//! "loaded threshold": the in-flight backlog above which the tunnel is
//! guaranteed to drain at its bottleneck rate every slot.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

// ============================================================================
// Identifiers
// ============================================================================

/// Index of a node in a [`PhysicalNetwork`] (dense, assigned in name order
/// of first appearance in the node list).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

/// Index of a directed link in a [`PhysicalNetwork`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkId(pub u32);

/// Index of a tunnel in an [`OverlaySpec`] (sorted by (src, dst)).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TunnelId(pub u32);

/// User-visible session identifier. Tie-breaks throughout the crate favor
/// the numerically lowest session id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SessionId(pub u32);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

// ============================================================================
// Physical network
// ============================================================================

/// A directed link with a positive integer capacity in packets per slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub tail: NodeId,
    pub head: NodeId,
    pub capacity: u64,
}

/// Immutable directed graph with named nodes and capacitated links.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalNetwork {
    names: Vec<String>,
    name_index: BTreeMap<String, NodeId>,
    links: Vec<Link>,
    link_index: BTreeMap<(NodeId, NodeId), LinkId>,
    out_adj: Vec<Vec<(NodeId, LinkId)>>,
    in_adj: Vec<Vec<(NodeId, LinkId)>>,
}

impl PhysicalNetwork {
    /// Builds a network from node names and `(tail, head, capacity)` links.
    ///
    /// Rejects duplicate node names, unknown endpoints, self loops,
    /// duplicate directed links, and zero capacities.
    pub fn new<S: AsRef<str>>(
        nodes: &[S],
        links: &[(S, S, u64)],
    ) -> Result<Self, NetModelError> {
        let mut names = Vec::with_capacity(nodes.len());
        let mut name_index = BTreeMap::new();
        for n in nodes {
            let name = n.as_ref().to_string();
            let id = NodeId(names.len() as u32);
            if name_index.insert(name.clone(), id).is_some() {
                return Err(NetModelError::DuplicateNode(name));
            }
            names.push(name);
        }
        let mut net = PhysicalNetwork {
            out_adj: vec![Vec::new(); names.len()],
            in_adj: vec![Vec::new(); names.len()],
            names,
            name_index,
            links: Vec::with_capacity(links.len()),
            link_index: BTreeMap::new(),
        };
        for (tail, head, capacity) in links {
            let tail_id = net.node(tail.as_ref())?;
            let head_id = net.node(head.as_ref())?;
            if tail_id == head_id {
                return Err(NetModelError::SelfLoop(tail.as_ref().to_string()));
            }
            if *capacity == 0 {
                return Err(NetModelError::ZeroCapacity {
                    tail: net.name_of(tail_id).to_string(),
                    head: net.name_of(head_id).to_string(),
                });
            }
            let id = LinkId(net.links.len() as u32);
            if net.link_index.insert((tail_id, head_id), id).is_some() {
                return Err(NetModelError::DuplicateLink {
                    tail: net.name_of(tail_id).to_string(),
                    head: net.name_of(head_id).to_string(),
                });
            }
            net.links.push(Link { tail: tail_id, head: head_id, capacity: *capacity });
            net.out_adj[tail_id.0 as usize].push((head_id, id));
            net.in_adj[head_id.0 as usize].push((tail_id, id));
        }
        for adj in net.out_adj.iter_mut().chain(net.in_adj.iter_mut()) {
            adj.sort();
        }
        Ok(net)
    }

    pub fn node(&self, name: &str) -> Result<NodeId, NetModelError> {
        self.name_index
            .get(name)
            .copied()
            .ok_or_else(|| NetModelError::UnknownNode(name.to_string()))
    }

    pub fn name_of(&self, id: NodeId) -> &str {
        &self.names[id.0 as usize]
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.names.len() as u32).map(NodeId)
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0 as usize]
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link_between(&self, tail: NodeId, head: NodeId) -> Option<LinkId> {
        self.link_index.get(&(tail, head)).copied()
    }

    /// Outgoing neighbors of `node`, ascending by neighbor id.
    pub fn out_neighbors(&self, node: NodeId) -> &[(NodeId, LinkId)] {
        &self.out_adj[node.0 as usize]
    }

    /// Incoming neighbors of `node`, ascending by neighbor id.
    pub fn in_neighbors(&self, node: NodeId) -> &[(NodeId, LinkId)] {
        &self.in_adj[node.0 as usize]
    }

    /// Directed hop count from every node to `dest` (BFS on reversed links).
    /// `None` marks nodes that cannot reach `dest`.
    pub fn hop_counts_to(&self, dest: NodeId) -> Vec<Option<u64>> {
        let mut hops = vec![None; self.names.len()];
        hops[dest.0 as usize] = Some(0);
        let mut queue = VecDeque::from([dest]);
        while let Some(u) = queue.pop_front() {
            let next = hops[u.0 as usize].unwrap() + 1;
            for &(v, _) in self.in_neighbors(u) {
                if hops[v.0 as usize].is_none() {
                    hops[v.0 as usize] = Some(next);
                    queue.push_back(v);
                }
            }
        }
        hops
    }
}

// ============================================================================
// Overlay
// ============================================================================

/// One tunnel: an acyclic physical path between two routers whose interior
/// nodes are forwarders. `forwarder_count` is the number of interior nodes
/// (a direct router-to-router link has zero, and its in-flight backlog is
/// identically zero).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tunnel {
    pub id: TunnelId,
    pub src: NodeId,
    pub dst: NodeId,
    /// Full node sequence, `src` first and `dst` last.
    pub nodes: Vec<NodeId>,
    /// Link sequence along `nodes`; `links[0]` is the input link.
    pub links: Vec<LinkId>,
    pub forwarder_count: u64,
    /// Capacity of the input (first) link.
    pub input_capacity: u64,
    /// Minimum capacity over all links of the path, input link included.
    pub bottleneck_capacity: u64,
    /// Maximum capacity over all links of the path, input link included.
    pub max_capacity: u64,
    /// Backlog level above which the tunnel drains at `bottleneck_capacity`
    /// every slot: `M*Rmin + M(M-1)/2 * Rmax` for `M` forwarders.
    pub loaded_threshold: u64,
}

/// Closed-form loaded threshold for a tunnel with `m` forwarders. Equals the
/// worst case of stacking the whole backlog on the first stage and letting
/// each later stage hold a full burst.
pub fn loaded_threshold(m: u64, r_min: u64, r_max: u64) -> u64 {
    m * r_min + m * m.saturating_sub(1) / 2 * r_max
}

/// A validated overlay: routers plus at most one tunnel per ordered pair.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlaySpec {
    pub net: PhysicalNetwork,
    /// Sorted router ids.
    pub routers: Vec<NodeId>,
    pub tunnels: Vec<Tunnel>,
    pair_index: BTreeMap<(NodeId, NodeId), TunnelId>,
}

impl OverlaySpec {
    pub fn is_router(&self, node: NodeId) -> bool {
        self.routers.binary_search(&node).is_ok()
    }

    pub fn tunnel(&self, id: TunnelId) -> &Tunnel {
        &self.tunnels[id.0 as usize]
    }

    pub fn tunnel_between(&self, src: NodeId, dst: NodeId) -> Option<TunnelId> {
        self.pair_index.get(&(src, dst)).copied()
    }

    /// Tunnels leaving `router`, ascending by (src, dst).
    pub fn tunnels_from(&self, router: NodeId) -> impl Iterator<Item = &Tunnel> + '_ {
        self.tunnels.iter().filter(move |t| t.src == router)
    }

    pub fn max_input_capacity(&self) -> u64 {
        self.tunnels.iter().map(|t| t.input_capacity).max().unwrap_or(0)
    }

    /// Human-readable `src->dst` label for a tunnel.
    pub fn tunnel_label(&self, id: TunnelId) -> String {
        let t = self.tunnel(id);
        format!("{}->{}", self.net.name_of(t.src), self.net.name_of(t.dst))
    }
}

/// Builds an overlay from router names and explicit tunnel paths (node name
/// sequences, first and last entries routers, interior entries forwarders).
///
/// Every hop must be a physical link, paths may not repeat a node, and each
/// ordered router pair may carry at most one tunnel.
pub fn build_overlay<S: AsRef<str>>(
    net: &PhysicalNetwork,
    routers: &[S],
    paths: &[Vec<S>],
) -> Result<OverlaySpec, NetModelError> {
    if paths.is_empty() {
        return Err(NetModelError::EmptyOverlay);
    }
    let mut router_ids = Vec::with_capacity(routers.len());
    for r in routers {
        router_ids.push(net.node(r.as_ref())?);
    }
    router_ids.sort();
    router_ids.dedup();
    let router_set: BTreeSet<NodeId> = router_ids.iter().copied().collect();

    let mut tunnels = Vec::new();
    for path in paths {
        if path.len() < 2 {
            return Err(NetModelError::PathTooShort {
                path: path.iter().map(|n| n.as_ref().to_string()).collect::<Vec<_>>().join(","),
            });
        }
        let nodes: Vec<NodeId> =
            path.iter().map(|n| net.node(n.as_ref())).collect::<Result<_, _>>()?;
        let (src, dst) = (nodes[0], *nodes.last().unwrap());
        for end in [src, dst] {
            if !router_set.contains(&end) {
                return Err(NetModelError::PathEndpointNotRouter {
                    node: net.name_of(end).to_string(),
                });
            }
        }
        let mut seen = BTreeSet::new();
        for &n in &nodes {
            if !seen.insert(n) {
                return Err(NetModelError::PathRepeatsNode {
                    src: net.name_of(src).to_string(),
                    dst: net.name_of(dst).to_string(),
                    node: net.name_of(n).to_string(),
                });
            }
        }
        for &n in &nodes[1..nodes.len() - 1] {
            if router_set.contains(&n) {
                return Err(NetModelError::InteriorIsRouter {
                    src: net.name_of(src).to_string(),
                    dst: net.name_of(dst).to_string(),
                    node: net.name_of(n).to_string(),
                });
            }
        }
        let mut links = Vec::with_capacity(nodes.len() - 1);
        for hop in nodes.windows(2) {
            let id = net.link_between(hop[0], hop[1]).ok_or_else(|| NetModelError::MissingLink {
                tail: net.name_of(hop[0]).to_string(),
                head: net.name_of(hop[1]).to_string(),
            })?;
            links.push(id);
        }
        let caps: Vec<u64> = links.iter().map(|&l| net.link(l).capacity).collect();
        let m = (nodes.len() - 2) as u64;
        let r_min = *caps.iter().min().unwrap();
        let r_max = *caps.iter().max().unwrap();
        tunnels.push(Tunnel {
            id: TunnelId(0), // assigned after sorting
            src,
            dst,
            nodes,
            links,
            forwarder_count: m,
            input_capacity: caps[0],
            bottleneck_capacity: r_min,
            max_capacity: r_max,
            loaded_threshold: loaded_threshold(m, r_min, r_max),
        });
    }

    tunnels.sort_by_key(|t| (t.src, t.dst));
    let mut pair_index = BTreeMap::new();
    for (i, t) in tunnels.iter_mut().enumerate() {
        t.id = TunnelId(i as u32);
        if pair_index.insert((t.src, t.dst), t.id).is_some() {
            return Err(NetModelError::DuplicatePair {
                src: net.name_of(t.src).to_string(),
                dst: net.name_of(t.dst).to_string(),
            });
        }
    }

    Ok(OverlaySpec { net: net.clone(), routers: router_ids, tunnels, pair_index })
}

// ============================================================================
// Non-overlap validation
// ============================================================================

/// A link shared by two tunnels outside their input links.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapConflict {
    pub tunnel_a: TunnelId,
    pub tunnel_b: TunnelId,
    pub link: LinkId,
}

/// Result of [`validate_non_overlapping`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapReport {
    pub conflicts: Vec<OverlapConflict>,
}

impl OverlapReport {
    pub fn is_ok(&self) -> bool {
        self.conflicts.is_empty()
    }
}

/// Checks that the tunnels' link sets, each *excluding its own input link*,
/// are pairwise disjoint. Two tunnels sharing only their first links pass;
/// any other shared link is reported once per (unordered) tunnel pair with
/// `tunnel_a < tunnel_b`.
pub fn validate_non_overlapping(ov: &OverlaySpec) -> OverlapReport {
    let mut conflicts = Vec::new();
    let sets: Vec<BTreeSet<LinkId>> =
        ov.tunnels.iter().map(|t| t.links[1..].iter().copied().collect()).collect();
    for a in 0..ov.tunnels.len() {
        for b in a + 1..ov.tunnels.len() {
            for link in sets[a].intersection(&sets[b]) {
                conflicts.push(OverlapConflict {
                    tunnel_a: TunnelId(a as u32),
                    tunnel_b: TunnelId(b as u32),
                    link: *link,
                });
            }
        }
    }
    OverlapReport { conflicts }
}

// ============================================================================
// Thresholds
// ============================================================================

/// The gate constants of an overlay: `loaded` is the largest loaded
/// threshold over all tunnels, `gate` the injection gate used by the
/// threshold policies, and `backlog_bound` the resulting hard bound on any
/// tunnel's in-flight backlog under a gated policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThresholdSet {
    pub loaded: u64,
    pub gate: u64,
    pub backlog_bound: u64,
}

impl ThresholdSet {
    /// Builds a threshold set with an explicit gate, skipping the floor
    /// check. Intended for gate sweeps of the congestion-aware variant; the
    /// drain guarantees behind the floor do not hold below it.
    pub fn with_unchecked_gate(ov: &OverlaySpec, gate: u64) -> ThresholdSet {
        let loaded = ov.tunnels.iter().map(|t| t.loaded_threshold).max().unwrap_or(0);
        ThresholdSet { loaded, gate, backlog_bound: gate + ov.max_input_capacity() }
    }
}

/// Computes the overlay's threshold set. The gate defaults to the floor
/// `loaded + max input capacity` and may only be overridden upward.
pub fn thresholds(
    ov: &OverlaySpec,
    override_gate: Option<u64>,
) -> Result<ThresholdSet, NetModelError> {
    let loaded = ov.tunnels.iter().map(|t| t.loaded_threshold).max().unwrap_or(0);
    let floor = loaded + ov.max_input_capacity();
    let gate = override_gate.unwrap_or(floor);
    if gate < floor {
        return Err(NetModelError::GateBelowFloor { requested: gate, floor });
    }
    Ok(ThresholdSet { loaded, gate, backlog_bound: gate + ov.max_input_capacity() })
}

// ============================================================================
// Path generation
// ============================================================================

/// Shortest physical paths between all ordered router pairs that can be
/// joined through forwarder-only interiors. Fewest hops win; among
/// equal-length paths the tie-break is deterministic: BFS scans neighbors
/// in ascending node id, and a node keeps the first predecessor that
/// discovers it.
pub fn router_pair_paths(
    net: &PhysicalNetwork,
    routers: &[NodeId],
) -> BTreeMap<(NodeId, NodeId), Vec<NodeId>> {
    let router_set: BTreeSet<NodeId> = routers.iter().copied().collect();
    let mut out = BTreeMap::new();
    for &src in &router_set {
        // BFS from src through forwarders only; router targets terminate.
        let mut parent: BTreeMap<NodeId, NodeId> = BTreeMap::new();
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for &(v, _) in net.out_neighbors(u) {
                if v == src || parent.contains_key(&v) {
                    continue;
                }
                parent.insert(v, u);
                if !router_set.contains(&v) {
                    queue.push_back(v);
                }
            }
        }
        for &dst in &router_set {
            if dst == src || !parent.contains_key(&dst) {
                continue;
            }
            let mut path = vec![dst];
            let mut cur = dst;
            while cur != src {
                cur = parent[&cur];
                path.push(cur);
            }
            path.reverse();
            out.insert((src, dst), path);
        }
    }
    out
}

// ============================================================================
// Errors
// ============================================================================

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetModelError {
    #[error("duplicate node name {0:?}")]
    DuplicateNode(String),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("self loop at node {0:?}")]
    SelfLoop(String),
    #[error("link {tail:?}->{head:?} has zero capacity")]
    ZeroCapacity { tail: String, head: String },
    #[error("duplicate link {tail:?}->{head:?}")]
    DuplicateLink { tail: String, head: String },
    #[error("an overlay needs at least one tunnel path")]
    EmptyOverlay,
    #[error("path [{path}] has fewer than two nodes")]
    PathTooShort { path: String },
    #[error("path endpoint {node:?} is not a router")]
    PathEndpointNotRouter { node: String },
    #[error("path {src}->{dst} repeats node {node:?}")]
    PathRepeatsNode { src: String, dst: String, node: String },
    #[error("path {src}->{dst} passes through router {node:?}; interior nodes must be forwarders")]
    InteriorIsRouter { src: String, dst: String, node: String },
    #[error("path hop {tail:?}->{head:?} is not a physical link")]
    MissingLink { tail: String, head: String },
    #[error("more than one path for router pair {src}->{dst}")]
    DuplicatePair { src: String, dst: String },
    #[error("gate {requested} is below the floor {floor}; gates may only be raised")]
    GateBelowFloor { requested: u64, floor: u64 },
}

// ============================================================================
// Tests
// ============================================================================
