//! Network graph model: nodes placed in a plane, radio-range links,
//! and named multi-hop paths.
//!
//! Links are undirected and keyed by the ordered pair of their endpoint
//! ids, so `(a, b)` and `(b, a)` name the same link. A link that goes
//! down stays in the graph (it can come back up); adjacency queries only
//! see links that are currently up.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::time::SimDuration;

/// Default FIFO queue depth for a link direction, in packets.
pub const DEFAULT_QUEUE_CAPACITY: u32 = 50;
/// Retry budget for random topology generation before giving up.
pub const DEFAULT_GENERATION_RETRIES: u32 = 100;

/// Index of a node within its topology. Ordering is the node's label
/// order because nodes are created in label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Canonical undirected link identifier: endpoints stored smallest-first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkKey {
    a: NodeId,
    b: NodeId,
}

impl LinkKey {
    /// Normalizes the endpoint order. Endpoints must be distinct.
    pub fn new(x: NodeId, y: NodeId) -> LinkKey {
        debug_assert_ne!(x, y, "link endpoints must be distinct");
        if x <= y {
            LinkKey { a: x, b: y }
        } else {
            LinkKey { a: y, b: x }
        }
    }

    pub fn endpoints(self) -> (NodeId, NodeId) {
        (self.a, self.b)
    }

    /// The endpoint opposite `node`, if `node` is on this link.
    pub fn other(self, node: NodeId) -> Option<NodeId> {
        if node == self.a {
            Some(self.b)
        } else if node == self.b {
            Some(self.a)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkState {
    Up,
    Down,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub label: String,
    pub position: (f64, f64),
    pub tx_range: f64,
}

#[derive(Debug, Clone)]
pub struct Link {
    pub key: LinkKey,
    pub bandwidth_bps: u64,
    pub prop_delay: SimDuration,
    pub state: LinkState,
    pub queue_capacity: u32,
}

/// A named loop-free node sequence used for source routing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSpec {
    pub label: String,
    pub hops: Vec<NodeId>,
}

impl PathSpec {
    pub fn new(label: impl Into<String>, hops: Vec<NodeId>) -> PathSpec {
        PathSpec { label: label.into(), hops }
    }

    pub fn src(&self) -> Option<NodeId> {
        self.hops.first().copied()
    }

    pub fn dst(&self) -> Option<NodeId> {
        self.hops.last().copied()
    }

    /// Consecutive hop pairs as canonical link keys.
    pub fn links(&self) -> impl Iterator<Item = LinkKey> + '_ {
        self.hops.windows(2).map(|w| LinkKey::new(w[0], w[1]))
    }
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown node label {0:?}")]
    UnknownLabel(String),
    #[error("no link between {0} and {1}")]
    UnknownLink(NodeId, NodeId),
    #[error("invalid topology: {0}")]
    Invalid(String),
    #[error("no connected topology found after {attempts} attempts")]
    ConnectivityUnattainable { attempts: u32 },
}

/// Immutable node/link structure plus mutable link up/down state.
#[derive(Debug, Clone)]
pub struct Topology {
    nodes: Vec<Node>,
    labels: BTreeMap<String, NodeId>,
    links: BTreeMap<LinkKey, Link>,
    // Adjacency over *up* links only.
    adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl Topology {
    /// Builds a topology and validates its structure: unique labels,
    /// distinct known endpoints, no duplicate links, positive bandwidth
    /// and queue capacity.
    pub fn new(nodes: Vec<Node>, links: Vec<Link>) -> Result<Topology, TopologyError> {
        let mut labels = BTreeMap::new();
        for (i, node) in nodes.iter().enumerate() {
            if node.id != NodeId(i as u32) {
                return Err(TopologyError::Invalid(format!(
                    "node {} out of order (expected id {})",
                    node.id, i
                )));
            }
            if labels.insert(node.label.clone(), node.id).is_some() {
                return Err(TopologyError::Invalid(format!(
                    "duplicate node label {:?}",
                    node.label
                )));
            }
        }
        let mut adjacency: BTreeMap<NodeId, BTreeSet<NodeId>> =
            nodes.iter().map(|n| (n.id, BTreeSet::new())).collect();
        let mut link_map = BTreeMap::new();
        for link in links {
            let (a, b) = link.key.endpoints();
            for end in [a, b] {
                if end.0 as usize >= nodes.len() {
                    return Err(TopologyError::UnknownNode(end));
                }
            }
            if link.bandwidth_bps == 0 {
                return Err(TopologyError::Invalid(format!(
                    "link {}-{} has zero bandwidth",
                    a, b
                )));
            }
            if link.queue_capacity == 0 {
                return Err(TopologyError::Invalid(format!(
                    "link {}-{} has zero queue capacity",
                    a, b
                )));
            }
            let up = link.state == LinkState::Up;
            if link_map.insert(link.key, link).is_some() {
                return Err(TopologyError::Invalid(format!("duplicate link {}-{}", a, b)));
            }
            if up {
                adjacency.get_mut(&a).unwrap().insert(b);
                adjacency.get_mut(&b).unwrap().insert(a);
            }
        }
        Ok(Topology { nodes, labels, links: link_map, adjacency })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&Node, TopologyError> {
        self.nodes.get(id.0 as usize).ok_or(TopologyError::UnknownNode(id))
    }

    pub fn label(&self, id: NodeId) -> &str {
        self.nodes.get(id.0 as usize).map(|n| n.label.as_str()).unwrap_or("?")
    }

    pub fn lookup(&self, label: &str) -> Result<NodeId, TopologyError> {
        self.labels
            .get(label)
            .copied()
            .ok_or_else(|| TopologyError::UnknownLabel(label.to_string()))
    }

    pub fn links(&self) -> impl Iterator<Item = &Link> {
        self.links.values()
    }

    pub fn link(&self, key: LinkKey) -> Option<&Link> {
        self.links.get(&key)
    }

    /// Nodes reachable from `node` over a single up link.
    pub fn neighbors(&self, node: NodeId) -> Result<&BTreeSet<NodeId>, TopologyError> {
        self.adjacency.get(&node).ok_or(TopologyError::UnknownNode(node))
    }

    /// True when the path has at least two hops, repeats no node, and
    /// every consecutive pair is joined by an up link. Malformed paths
    /// return false rather than erroring.
    pub fn validate_path(&self, path: &PathSpec) -> bool {
        if path.hops.len() < 2 {
            return false;
        }
        let mut seen = BTreeSet::new();
        for hop in &path.hops {
            if hop.0 as usize >= self.nodes.len() || !seen.insert(*hop) {
                return false;
            }
        }
        path.hops.windows(2).all(|w| {
            self.links
                .get(&LinkKey::new(w[0], w[1]))
                .is_some_and(|l| l.state == LinkState::Up)
        })
    }

    /// Marks a link up or down. Setting the current state is a no-op.
    pub fn set_link_state(&mut self, key: LinkKey, state: LinkState) -> Result<(), TopologyError> {
        let (a, b) = key.endpoints();
        let link = self.links.get_mut(&key).ok_or(TopologyError::UnknownLink(a, b))?;
        if link.state == state {
            return Ok(());
        }
        link.state = state;
        match state {
            LinkState::Up => {
                self.adjacency.get_mut(&a).unwrap().insert(b);
                self.adjacency.get_mut(&b).unwrap().insert(a);
            }
            LinkState::Down => {
                self.adjacency.get_mut(&a).unwrap().remove(&b);
                self.adjacency.get_mut(&b).unwrap().remove(&a);
            }
        }
        Ok(())
    }

    /// True when every node can reach every other over up links.
    pub fn is_connected(&self) -> bool {
        let Some(first) = self.nodes.first() else { return true };
        let mut seen = BTreeSet::from([first.id]);
        let mut frontier = VecDeque::from([first.id]);
        while let Some(node) = frontier.pop_front() {
            for &next in &self.adjacency[&node] {
                if seen.insert(next) {
                    frontier.push_back(next);
                }
            }
        }
        seen.len() == self.nodes.len()
    }
}

/// Link parameters applied to every link of a generated topology.
#[derive(Debug, Clone, Copy)]
pub struct LinkDefaults {
    pub bandwidth_bps: u64,
    pub prop_delay: SimDuration,
    pub queue_capacity: u32,
}

impl Default for LinkDefaults {
    fn default() -> Self {
        LinkDefaults {
            bandwidth_bps: 2_000_000,
            prop_delay: SimDuration::from_millis(1),
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
        }
    }
}

/// Scatters `n` nodes uniformly over `area` and links every pair within
/// `range` of each other. Identical arguments always produce the same
/// graph. Retries with perturbed seeds (up to the default budget) until
/// the graph is connected.
pub fn generate_random_topology(
    n: u32,
    area: (f64, f64),
    range: f64,
    seed: u64,
) -> Result<Topology, TopologyError> {
    generate_random_topology_with(n, area, range, seed, LinkDefaults::default())
}

pub fn generate_random_topology_with(
    n: u32,
    area: (f64, f64),
    range: f64,
    seed: u64,
    defaults: LinkDefaults,
) -> Result<Topology, TopologyError> {
    if n == 0 {
        return Err(TopologyError::Invalid("node count must be positive".into()));
    }
    if !(area.0 > 0.0 && area.1 > 0.0 && area.0.is_finite() && area.1.is_finite()) {
        return Err(TopologyError::Invalid("area sides must be positive and finite".into()));
    }
    if !(range > 0.0 && range.is_finite()) {
        return Err(TopologyError::Invalid("radio range must be positive and finite".into()));
    }
    for attempt in 0..DEFAULT_GENERATION_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
        let nodes: Vec<Node> = (0..n)
            .map(|i| Node {
                id: NodeId(i),
                label: format!("n{i}"),
                position: (rng.random_range(0.0..area.0), rng.random_range(0.0..area.1)),
                tx_range: range,
            })
            .collect();
        let mut links = Vec::new();
        for i in 0..nodes.len() {
            for j in (i + 1)..nodes.len() {
                let (xi, yi) = nodes[i].position;
                let (xj, yj) = nodes[j].position;
                let dist = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
                if dist <= range {
                    links.push(Link {
                        key: LinkKey::new(nodes[i].id, nodes[j].id),
                        bandwidth_bps: defaults.bandwidth_bps,
                        prop_delay: defaults.prop_delay,
                        state: LinkState::Up,
                        queue_capacity: defaults.queue_capacity,
                    });
                }
            }
        }
        let topo = Topology::new(nodes, links)?;
        if topo.is_connected() {
            return Ok(topo);
        }
    }
    Err(TopologyError::ConnectivityUnattainable { attempts: DEFAULT_GENERATION_RETRIES })
}
