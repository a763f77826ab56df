//! Finite weighted graph of architectures.
//!
//! Nodes carry an arbitrary payload (a network spec plus parameters during a
//! search, `()` in pure-graph experiments). The kernel is a dense symmetric
//! matrix with a zero diagonal; an edge exists wherever the weight is
//! positive. New nodes are attached to the center, which gives the default
//! star topology of a local graph.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge weight must be positive, got {0}")]
    NonPositiveWeight(f64),
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("self loops are not allowed (node {0})")]
    SelfLoop(usize),
}

/// Handle of a node inside one [`ArchGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(usize);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Children connect only to the center.
    #[default]
    Star,
    /// Every pair of nodes is connected.
    Complete,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchGraph<P> {
    nodes: Vec<P>,
    // row-major n x n
    kernel: Vec<f64>,
    center: NodeId,
}

impl<P> ArchGraph<P> {
    pub fn new(center_payload: P) -> Self {
        ArchGraph {
            nodes: vec![center_payload],
            kernel: vec![0.0],
            center: NodeId(0),
        }
    }

    pub fn center(&self) -> NodeId {
        self.center
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Number of undirected edges with positive weight.
    pub fn edge_count(&self) -> usize {
        let n = self.nodes.len();
        (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .filter(|&(a, b)| self.kernel[a * n + b] > 0.0)
            .count()
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn contains(&self, g: NodeId) -> bool {
        g.0 < self.nodes.len()
    }

    fn check(&self, g: NodeId) -> Result<(), GraphError> {
        if self.contains(g) {
            Ok(())
        } else {
            Err(GraphError::UnknownNode(g.0))
        }
    }

    /// Looks up a node by raw index.
    pub fn node(&self, index: usize) -> Result<NodeId, GraphError> {
        let g = NodeId(index);
        self.check(g).map(|_| g)
    }

    pub fn payload(&self, g: NodeId) -> &P {
        &self.nodes[g.0]
    }

    pub fn payload_mut(&mut self, g: NodeId) -> &mut P {
        &mut self.nodes[g.0]
    }

    pub fn payloads(&self) -> &[P] {
        &self.nodes
    }

    pub fn into_payloads(self) -> Vec<P> {
        self.nodes
    }

    /// Kernel weight K(a, b). Panics if either id does not belong to this graph.
    #[inline]
    pub fn kernel(&self, a: NodeId, b: NodeId) -> f64 {
        let n = self.nodes.len();
        assert!(a.0 < n && b.0 < n, "node id out of range");
        self.kernel[a.0 * n + b.0]
    }

    /// Appends a node connected to the center with the given weight.
    pub fn add_node(&mut self, payload: P, weight_to_center: f64) -> Result<NodeId, GraphError> {
        if !(weight_to_center > 0.0) || !weight_to_center.is_finite() {
            return Err(GraphError::NonPositiveWeight(weight_to_center));
        }
        let n = self.nodes.len();
        let m = n + 1;
        let mut kernel = vec![0.0; m * m];
        for a in 0..n {
            kernel[a * m..a * m + n].copy_from_slice(&self.kernel[a * n..a * n + n]);
        }
        self.kernel = kernel;
        self.nodes.push(payload);
        let id = NodeId(n);
        let c = self.center.0;
        self.kernel[c * m + n] = weight_to_center;
        self.kernel[n * m + c] = weight_to_center;
        Ok(id)
    }

    /// Sets the symmetric weight of one edge. A weight of zero removes the edge.
    pub fn set_weight(&mut self, a: NodeId, b: NodeId, w: f64) -> Result<(), GraphError> {
        self.check(a)?;
        self.check(b)?;
        if a == b {
            return Err(GraphError::SelfLoop(a.0));
        }
        if !(w >= 0.0) || !w.is_finite() {
            return Err(GraphError::NonPositiveWeight(w));
        }
        let n = self.nodes.len();
        self.kernel[a.0 * n + b.0] = w;
        self.kernel[b.0 * n + a.0] = w;
        Ok(())
    }

    /// Connects every pair of distinct nodes with weight `w`.
    pub fn make_complete(&mut self, w: f64) -> Result<(), GraphError> {
        if !(w > 0.0) {
            return Err(GraphError::NonPositiveWeight(w));
        }
        let n = self.nodes.len();
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    self.kernel[a * n + b] = w;
                }
            }
        }
        Ok(())
    }

    /// All nodes with positive kernel weight to `g`, ascending by id.
    pub fn neighbors(&self, g: NodeId) -> Result<Vec<(NodeId, f64)>, GraphError> {
        self.check(g)?;
        let n = self.nodes.len();
        Ok((0..n)
            .filter_map(|b| {
                let w = self.kernel[g.0 * n + b];
                (w > 0.0).then_some((NodeId(b), w))
            })
            .collect())
    }

    /// Serializable view: `{nodes:[{id, spec_digest, param_count}], edges:[{a, b, w}]}`.
    pub fn dump<F>(&self, summarize: F) -> GraphDump
    where
        F: Fn(&P) -> (String, usize),
    {
        let nodes = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, p)| {
                let (spec_digest, param_count) = summarize(p);
                DumpNode { id, spec_digest, param_count }
            })
            .collect();
        let n = self.nodes.len();
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                let w = self.kernel[a * n + b];
                if w > 0.0 {
                    edges.push(DumpEdge { a, b, w });
                }
            }
        }
        GraphDump { nodes, edges }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpNode {
    pub id: usize,
    pub spec_digest: String,
    pub param_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpEdge {
    pub a: usize,
    pub b: usize,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDump {
    pub nodes: Vec<DumpNode>,
    pub edges: Vec<DumpEdge>,
}

/// Builds a star (or complete) graph with unit weights from a center and children.
pub fn unit_graph<P>(center: P, children: impl IntoIterator<Item = P>, topology: Topology) -> ArchGraph<P> {
    let mut graph = ArchGraph::new(center);
    for child in children {
        graph.add_node(child, 1.0).expect("unit weight is positive");
    }
    if topology == Topology::Complete && graph.node_count() > 1 {
        graph.make_complete(1.0).expect("unit weight is positive");
    }
    graph
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star(leaves: usize) -> ArchGraph<()> {
        unit_graph((), std::iter::repeat_n((), leaves), Topology::Star)
    }

    #[test]
    fn new_graph_is_single_node() {
        let g = ArchGraph::new("p");
        assert_eq!(g.node_count(), 1);
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.kernel(g.center(), g.center()), 0.0);
    }

    #[test]
    fn add_node_sets_symmetric_weight() {
        let mut g = ArchGraph::new(0u8);
        let id = g.add_node(1, 1.0).unwrap();
        assert_eq!(g.kernel(g.center(), id), 1.0);
        assert_eq!(g.kernel(id, g.center()), 1.0);
        for k in 2..9 {
            g.add_node(k, 1.0).unwrap();
        }
        assert_eq!(g.node_count(), 9);
        assert_eq!(g.edge_count(), 8);
    }

    #[test]
    fn add_node_rejects_zero_weight() {
        let mut g = ArchGraph::new(());
        assert_eq!(g.add_node((), 0.0), Err(GraphError::NonPositiveWeight(0.0)));
        assert!(g.add_node((), -1.0).is_err());
        assert!(g.add_node((), f64::NAN).is_err());
    }

    #[test]
    fn neighbors_of_star() {
        let g = star(4);
        let c = g.neighbors(g.center()).unwrap();
        assert_eq!(c.len(), 4);
        assert!(c.windows(2).all(|w| w[0].0 < w[1].0));
        let leaf = g.node(3).unwrap();
        assert_eq!(g.neighbors(leaf).unwrap(), vec![(g.center(), 1.0)]);
        assert_eq!(g.node(10), Err(GraphError::UnknownNode(10)));
        let foreign = star(20).node(15).unwrap();
        assert_eq!(g.neighbors(foreign), Err(GraphError::UnknownNode(15)));
    }

    #[test]
    fn complete_topology() {
        let g = unit_graph((), std::iter::repeat_n((), 3), Topology::Complete);
        assert_eq!(g.edge_count(), 6);
        for a in g.ids() {
            assert_eq!(g.kernel(a, a), 0.0);
            assert_eq!(g.neighbors(a).unwrap().len(), 3);
        }
    }

    #[test]
    fn override_hook_keeps_symmetry() {
        let mut g = star(3);
        let a = g.node(1).unwrap();
        let b = g.node(2).unwrap();
        g.set_weight(a, b, 0.25).unwrap();
        assert_eq!(g.kernel(a, b), g.kernel(b, a));
        assert_eq!(g.set_weight(a, a, 1.0), Err(GraphError::SelfLoop(1)));
    }

    #[test]
    fn same_calls_same_graph() {
        assert_eq!(star(5), star(5));
    }

    #[test]
    fn dump_lists_edges_once() {
        let g = star(2);
        let d = g.dump(|_| ("x".into(), 3));
        assert_eq!(d.nodes.len(), 3);
        assert_eq!(d.edges.len(), 2);
        assert!(d.edges.iter().all(|e| e.a < e.b && e.w == 1.0));
    }
}
