//! Node identities, 2D positions, and the measurement topology shared by
//! every solver: sensors come first (`0..N`), anchors after (`N..N+M`), and
//! the neighbour sets are derived from an undirected edge list.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Coordinates beyond this magnitude are treated as solver divergence.
pub const DIVERGENCE_LIMIT_M: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("node index {index} out of range (network has {node_count} nodes)")]
    InvalidNode { index: usize, node_count: usize },
    #[error("self-loop edge at node {0}")]
    SelfLoop(usize),
    #[error("anchor position list has {got} entries, expected {expected}")]
    AnchorCountMismatch { got: usize, expected: usize },
    #[error("true sensor position list has {got} entries, expected {expected}")]
    SensorCountMismatch { got: usize, expected: usize },
    #[error("non-finite coordinate for node {0}")]
    NonFiniteCoordinate(usize),
    #[error("communication radius must be non-negative, got {0}")]
    BadRadius(f64),
}

/// Node index. Whether it names a sensor or an anchor is a pure function of
/// the index and the network's (N, M) split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Sensor,
    Anchor,
}

/// A 2D point in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Position {
    fn from(v: [f64; 2]) -> Self {
        Self { x: v[0], y: v[1] }
    }
}

impl From<Position> for [f64; 2] {
    fn from(p: Position) -> Self {
        [p.x, p.y]
    }
}

/// Euclidean distance between two points.
pub fn distance(a: Position, b: Position) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    (dx * dx + dy * dy).sqrt()
}

/// An undirected node pair, stored with the smaller index first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    lo: NodeId,
    hi: NodeId,
}

impl Edge {
    /// Normalizes the pair order; self-loops are rejected.
    pub fn new(a: NodeId, b: NodeId) -> Result<Self, NetworkError> {
        if a == b {
            return Err(NetworkError::SelfLoop(a.0));
        }
        let (lo, hi) = if a.0 < b.0 { (a, b) } else { (b, a) };
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> NodeId {
        self.lo
    }

    pub fn hi(&self) -> NodeId {
        self.hi
    }

    /// The endpoint opposite `node`, if `node` is an endpoint at all.
    pub fn other(&self, node: NodeId) -> Option<NodeId> {
        if node == self.lo {
            Some(self.hi)
        } else if node == self.hi {
            Some(self.lo)
        } else {
            None
        }
    }
}

/// Immutable sensor/anchor topology. Anchor positions are always known;
/// true sensor positions are present in synthetic and evaluation contexts
/// and absent for pure inference on real data.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    num_sensors: usize,
    num_anchors: usize,
    anchor_positions: Vec<Position>,
    true_sensor_positions: Option<Vec<Position>>,
    edges: BTreeSet<Edge>,
    adjacency: Vec<Vec<NodeId>>,
}

impl Network {
    pub fn new(
        num_sensors: usize,
        num_anchors: usize,
        anchor_positions: Vec<Position>,
        true_sensor_positions: Option<Vec<Position>>,
        edges: impl IntoIterator<Item = Edge>,
    ) -> Result<Self, NetworkError> {
        if anchor_positions.len() != num_anchors {
            return Err(NetworkError::AnchorCountMismatch {
                got: anchor_positions.len(),
                expected: num_anchors,
            });
        }
        if let Some(truth) = &true_sensor_positions {
            if truth.len() != num_sensors {
                return Err(NetworkError::SensorCountMismatch {
                    got: truth.len(),
                    expected: num_sensors,
                });
            }
            for (i, p) in truth.iter().enumerate() {
                if !p.is_finite() {
                    return Err(NetworkError::NonFiniteCoordinate(i));
                }
            }
        }
        for (k, p) in anchor_positions.iter().enumerate() {
            if !p.is_finite() {
                return Err(NetworkError::NonFiniteCoordinate(num_sensors + k));
            }
        }

        let node_count = num_sensors + num_anchors;
        let edges: BTreeSet<Edge> = edges.into_iter().collect();
        let mut adjacency = vec![Vec::new(); node_count];
        for e in &edges {
            if e.hi().0 >= node_count {
                return Err(NetworkError::InvalidNode {
                    index: e.hi().0,
                    node_count,
                });
            }
            adjacency[e.lo().0].push(e.hi());
            adjacency[e.hi().0].push(e.lo());
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }

        Ok(Self {
            num_sensors,
            num_anchors,
            anchor_positions,
            true_sensor_positions,
            edges,
            adjacency,
        })
    }

    pub fn num_sensors(&self) -> usize {
        self.num_sensors
    }

    pub fn num_anchors(&self) -> usize {
        self.num_anchors
    }

    pub fn node_count(&self) -> usize {
        self.num_sensors + self.num_anchors
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn role(&self, node: NodeId) -> Result<Role, NetworkError> {
        if node.0 >= self.node_count() {
            return Err(NetworkError::InvalidNode {
                index: node.0,
                node_count: self.node_count(),
            });
        }
        Ok(if node.0 < self.num_sensors {
            Role::Sensor
        } else {
            Role::Anchor
        })
    }

    pub fn is_anchor(&self, node: NodeId) -> bool {
        node.0 >= self.num_sensors && node.0 < self.node_count()
    }

    /// Neighbour set of `node`, sorted by index.
    pub fn neighbors(&self, node: NodeId) -> Result<&[NodeId], NetworkError> {
        self.adjacency
            .get(node.0)
            .map(|v| v.as_slice())
            .ok_or(NetworkError::InvalidNode {
                index: node.0,
                node_count: self.node_count(),
            })
    }

    /// Edges in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, e: Edge) -> bool {
        self.edges.contains(&e)
    }

    pub fn anchor_position(&self, node: NodeId) -> Option<Position> {
        if self.is_anchor(node) {
            Some(self.anchor_positions[node.0 - self.num_sensors])
        } else {
            None
        }
    }

    pub fn anchor_positions(&self) -> &[Position] {
        &self.anchor_positions
    }

    pub fn true_sensor_positions(&self) -> Option<&[Position]> {
        self.true_sensor_positions.as_deref()
    }

    /// True position of any node; `None` for sensors without ground truth.
    pub fn true_position(&self, node: NodeId) -> Option<Position> {
        if self.is_anchor(node) {
            self.anchor_position(node)
        } else {
            self.true_sensor_positions
                .as_ref()
                .and_then(|t| t.get(node.0).copied())
        }
    }

    /// Position of `node` under the current sensor estimate vector:
    /// anchors resolve to their known positions.
    pub fn node_position(&self, node: NodeId, sensor_estimates: &[Position]) -> Position {
        match self.anchor_position(node) {
            Some(p) => p,
            None => sensor_estimates[node.0],
        }
    }

    /// Replaces the edge set, keeping nodes and positions.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = Edge>) -> Result<Self, NetworkError> {
        Self::new(
            self.num_sensors,
            self.num_anchors,
            self.anchor_positions.clone(),
            self.true_sensor_positions.clone(),
            edges,
        )
    }
}

/// Builds a disk-graph topology: an edge is present iff the node pair is
/// within `comm_radius` (use `f64::INFINITY` for full connectivity).
pub fn build_topology(
    sensor_positions: &[Position],
    anchor_positions: &[Position],
    comm_radius: f64,
) -> Result<Network, NetworkError> {
    if comm_radius.is_nan() || comm_radius < 0.0 {
        return Err(NetworkError::BadRadius(comm_radius));
    }
    let n = sensor_positions.len();
    let m = anchor_positions.len();
    let all: Vec<Position> = sensor_positions
        .iter()
        .chain(anchor_positions.iter())
        .copied()
        .collect();
    let mut edges = Vec::new();
    for i in 0..n + m {
        for j in (i + 1)..n + m {
            if distance(all[i], all[j]) <= comm_radius {
                edges.push(Edge::new(NodeId(i), NodeId(j))?);
            }
        }
    }
    Network::new(
        n,
        m,
        anchor_positions.to_vec(),
        Some(sensor_positions.to_vec()),
        edges,
    )
}
