//! Physical connectivity graph between nodes.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::NodeId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("a topology needs at least one node")]
    Empty,
    #[error("node count {0} exceeds the 16-bit id space")]
    TooManyNodes(usize),
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    BadEdge(NodeId, NodeId, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("the graph is not connected")]
    Disconnected,
    #[error("invalid geometry: area side {side}, range {range}")]
    BadGeometry { side: f64, range: f64 },
}

/// Undirected, connected graph with optional planar coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    adjacency: Vec<Vec<NodeId>>,
    pub positions: Option<Vec<(f64, f64)>>,
}

impl Topology {
    /// Builds from an edge list. Duplicate edges are merged.
    pub fn from_edges(n: usize, edges: &[(NodeId, NodeId)]) -> Result<Topology, TopologyError> {
        if n == 0 {
            return Err(TopologyError::Empty);
        }
        if n > usize::from(NodeId::MAX) + 1 {
            return Err(TopologyError::TooManyNodes(n));
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in edges {
            if usize::from(a) >= n || usize::from(b) >= n {
                return Err(TopologyError::BadEdge(a, b, n));
            }
            if a == b {
                return Err(TopologyError::SelfLoop(a));
            }
            adjacency[usize::from(a)].push(b);
            adjacency[usize::from(b)].push(a);
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
            adj.dedup();
        }
        let t = Topology { adjacency, positions: None };
        if !t.is_connected() {
            return Err(TopologyError::Disconnected);
        }
        Ok(t)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.adjacency.len()).map(|i| i as NodeId)
    }

    /// Open neighborhood, sorted ascending.
    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.adjacency[usize::from(v)]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adjacency[usize::from(v)].len()
    }

    pub fn are_adjacent(&self, a: NodeId, b: NodeId) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }

    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::new();
        for v in self.nodes() {
            for &u in self.neighbors(v) {
                if v < u {
                    out.push((v, u));
                }
            }
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &u in &self.adjacency[v] {
                let u = usize::from(u);
                if !seen[u] {
                    seen[u] = true;
                    count += 1;
                    stack.push(u);
                }
            }
        }
        count == n
    }

    /// Random geometric placement in a square of side `area_side`.
    ///
    /// The first node sits at the center. Every later node lands uniformly
    /// inside the radio disc of a uniformly chosen already placed node (and
    /// inside the square), so the result is connected by construction. Nodes
    /// within `range` of each other are linked.
    pub fn random_geometric(
        n: usize,
        area_side: f64,
        range: f64,
        rng: &mut impl Rng,
    ) -> Result<Topology, TopologyError> {
        if n == 0 {
            return Err(TopologyError::Empty);
        }
        if n > usize::from(NodeId::MAX) + 1 {
            return Err(TopologyError::TooManyNodes(n));
        }
        if !(area_side > 0.0 && range > 0.0 && area_side.is_finite() && range.is_finite()) {
            return Err(TopologyError::BadGeometry { side: area_side, range });
        }
        let mut pos: Vec<(f64, f64)> = vec![(area_side / 2.0, area_side / 2.0)];
        while pos.len() < n {
            let anchor = pos[rng.random_range(0..pos.len())];
            let r = range * rng.random::<f64>().sqrt();
            let theta = rng.random::<f64>() * std::f64::consts::TAU;
            let p = (anchor.0 + r * theta.cos(), anchor.1 + r * theta.sin());
            let inside = (0.0..=area_side).contains(&p.0) && (0.0..=area_side).contains(&p.1);
            // The point is within range of its anchor only if the float
            // distance agrees, which keeps connectivity exact.
            if inside && dist(p, anchor) <= range {
                pos.push(p);
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                if dist(pos[i], pos[j]) <= range {
                    adjacency[i].push(j as NodeId);
                    adjacency[j].push(i as NodeId);
                }
            }
        }
        let t = Topology { adjacency, positions: Some(pos) };
        debug_assert!(t.is_connected());
        Ok(t)
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}
