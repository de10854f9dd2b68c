//! Shared graph constructors for the integration suites.
//!
//! Every test target compiles its own copy of this module and uses only a
//! subset of the helpers, so the unused-code lint is off here.
#![allow(dead_code)]

use neural_tree::graph::{Graph, NodeId};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

/// Erdős–Rényi graph on `0..n` with the given edge probability.
pub fn random_graph(rng: &mut ChaCha20Rng, n: usize, density: f64) -> Graph {
    let nodes: Vec<NodeId> = (0..n as NodeId).collect();
    let mut edges = Vec::new();
    for u in 0..n as NodeId {
        for v in (u + 1)..n as NodeId {
            if rng.random::<f64>() < density {
                edges.push((u, v));
            }
        }
    }
    Graph::new(nodes, edges).expect("generated edges follow the convention")
}

pub fn path_graph(n: usize) -> Graph {
    let nodes: Vec<NodeId> = (0..n as NodeId).collect();
    let edges = (1..n as NodeId).map(|v| (v - 1, v)).collect();
    Graph::new(nodes, edges).expect("path edges are valid")
}

pub fn cycle_graph(n: usize) -> Graph {
    assert!(n >= 3, "a cycle needs at least three nodes");
    let nodes: Vec<NodeId> = (0..n as NodeId).collect();
    let mut edges: Vec<(NodeId, NodeId)> = (1..n as NodeId).map(|v| (v - 1, v)).collect();
    edges.push((0, n as NodeId - 1));
    Graph::new(nodes, edges).expect("cycle edges are valid")
}

pub fn complete_graph(n: usize) -> Graph {
    let nodes: Vec<NodeId> = (0..n as NodeId).collect();
    let mut edges = Vec::new();
    for u in 0..n as NodeId {
        for v in (u + 1)..n as NodeId {
            edges.push((u, v));
        }
    }
    Graph::new(nodes, edges).expect("complete edges are valid")
}

/// Uniform random labeled tree on `0..n` via a random attachment order.
pub fn random_tree(rng: &mut ChaCha20Rng, n: usize) -> Graph {
    let nodes: Vec<NodeId> = (0..n as NodeId).collect();
    let mut edges = Vec::new();
    for v in 1..n as NodeId {
        let parent = rng.random_range(0..v);
        edges.push((parent.min(v), parent.max(v)));
    }
    Graph::new(nodes, edges).expect("tree edges are valid")
}

/// The worked 5-node example: two triangles sharing an edge, plus a pendant
/// triangle — junction tree has bags {1,2,3}, {2,3,4}, {3,4,5}.
pub fn fig_graph() -> Graph {
    Graph::new(
        vec![1, 2, 3, 4, 5],
        vec![(1, 2), (1, 3), (2, 3), (2, 4), (3, 4), (3, 5), (4, 5)],
    )
    .expect("fig edges are valid")
}
