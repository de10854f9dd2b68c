//! Undirected simple graphs and their on-disk formats.
//!
//! [`Graph`] is the input type for every algorithm in this crate: an
//! undirected simple graph over caller-provided integer node ids, optionally
//! carrying per-node feature vectors, class labels, node types, and
//! regression targets. All iteration orders are ascending-id so downstream
//! algorithms are deterministic.
//!
//! The serialized form is a JSON object
//! `{"nodes": [{"id": 0, "features": [..], "label": 1, "node_type": 0,
//!   "target": 0.5}, ..], "edges": [[u, v], ..]}` with `u < v` and optional
//! per-node fields; datasets are JSON-Lines files with one graph object per
//! line.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use thiserror::Error;

/// Caller-provided node identifier. Ids need not be contiguous.
pub type NodeId = u32;

/// Errors for graph construction, queries, and decoding.
#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("duplicate edge {{{0}, {1}}}")]
    DuplicateEdge(NodeId, NodeId),
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("feature dimension mismatch: node {node} has {got}, expected {expected}")]
    FeatureDim { node: NodeId, got: usize, expected: usize },
    #[error("features must cover all nodes or none; node {0} is missing")]
    PartialFeatures(NodeId),
    #[error("labels/types must cover all nodes or none; node {0} is missing")]
    PartialLabels(NodeId),
    #[error("graph has {0} nodes, exceeding the {1}-node guard for this operation")]
    TooLarge(usize, usize),
    #[error("graph is disconnected; operation requires a connected graph")]
    Disconnected,
    #[error("graph has no nodes")]
    Empty,
    #[error("invalid graph JSON: {0}")]
    Decode(String),
}

/// A sorted, deduplicated set of node ids — the working currency for bags,
/// cliques, and induced-subgraph selections.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeSet(Vec<NodeId>);

impl NodeSet {
    pub fn new(mut ids: Vec<NodeId>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        NodeSet(ids)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, v: NodeId) -> bool {
        self.0.binary_search(&v).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[NodeId] {
        &self.0
    }

    pub fn is_subset_of(&self, other: &NodeSet) -> bool {
        self.iter().all(|v| other.contains(v))
    }

    /// Number of ids common to both sets (linear merge; both are sorted).
    pub fn intersection_size(&self, other: &NodeSet) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].cmp(&other.0[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    pub fn intersection(&self, other: &NodeSet) -> NodeSet {
        NodeSet(self.iter().filter(|v| other.contains(*v)).collect())
    }
}

impl From<Vec<NodeId>> for NodeSet {
    fn from(ids: Vec<NodeId>) -> Self {
        NodeSet::new(ids)
    }
}

impl FromIterator<NodeId> for NodeSet {
    fn from_iter<T: IntoIterator<Item = NodeId>>(iter: T) -> Self {
        NodeSet::new(iter.into_iter().collect())
    }
}

/// Undirected simple graph with optional node features, labels, and types.
///
/// Invariants, enforced at construction and on decode: no self-loops, no
/// duplicate edges, every edge endpoint is a listed node, and feature vectors
/// (when present) cover every node with one shared dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_ids: Vec<NodeId>,
    adj: BTreeMap<NodeId, BTreeSet<NodeId>>,
    features: Option<BTreeMap<NodeId, Vec<f64>>>,
    labels: Option<BTreeMap<NodeId, u32>>,
    node_types: Option<BTreeMap<NodeId, u32>>,
    targets: Option<BTreeMap<NodeId, f64>>,
}

impl Graph {
    /// Builds a graph from node ids and undirected edges, rejecting
    /// self-loops, duplicate edges/nodes, and unknown endpoints.
    pub fn new(nodes: Vec<NodeId>, edges: Vec<(NodeId, NodeId)>) -> Result<Self, GraphError> {
        let mut node_ids = nodes;
        node_ids.sort_unstable();
        if let Some(w) = node_ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(GraphError::DuplicateNode(w[0]));
        }
        let mut adj: BTreeMap<NodeId, BTreeSet<NodeId>> =
            node_ids.iter().map(|&v| (v, BTreeSet::new())).collect();
        for (u, v) in edges {
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            if !adj.contains_key(&u) {
                return Err(GraphError::UnknownNode(u));
            }
            if !adj.contains_key(&v) {
                return Err(GraphError::UnknownNode(v));
            }
            let fresh = adj.get_mut(&u).unwrap().insert(v);
            adj.get_mut(&v).unwrap().insert(u);
            if !fresh {
                return Err(GraphError::DuplicateEdge(u.min(v), u.max(v)));
            }
        }
        Ok(Graph { node_ids, adj, features: None, labels: None, node_types: None, targets: None })
    }

    /// Attaches one feature vector per node; all vectors must share one
    /// dimension and every node must be covered.
    pub fn with_features(mut self, feats: BTreeMap<NodeId, Vec<f64>>) -> Result<Self, GraphError> {
        let dim = match feats.values().next() {
            Some(v) => v.len(),
            None if self.node_ids.is_empty() => 0,
            None => return Err(GraphError::PartialFeatures(self.node_ids[0])),
        };
        for &v in &self.node_ids {
            match feats.get(&v) {
                None => return Err(GraphError::PartialFeatures(v)),
                Some(x) if x.len() != dim => {
                    return Err(GraphError::FeatureDim { node: v, got: x.len(), expected: dim })
                }
                Some(_) => {}
            }
        }
        if let Some(&v) = feats.keys().find(|v| !self.adj.contains_key(v)) {
            return Err(GraphError::UnknownNode(v));
        }
        self.features = Some(feats);
        Ok(self)
    }

    /// Attaches one class label per node (all nodes or none).
    pub fn with_labels(mut self, labels: BTreeMap<NodeId, u32>) -> Result<Self, GraphError> {
        for &v in &self.node_ids {
            if !labels.contains_key(&v) {
                return Err(GraphError::PartialLabels(v));
            }
        }
        if let Some(&v) = labels.keys().find(|v| !self.adj.contains_key(v)) {
            return Err(GraphError::UnknownNode(v));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Attaches one node-type index per node (all nodes or none); types select
    /// per-type output heads in the neural models.
    pub fn with_node_types(mut self, types: BTreeMap<NodeId, u32>) -> Result<Self, GraphError> {
        for &v in &self.node_ids {
            if !types.contains_key(&v) {
                return Err(GraphError::PartialLabels(v));
            }
        }
        if let Some(&v) = types.keys().find(|v| !self.adj.contains_key(v)) {
            return Err(GraphError::UnknownNode(v));
        }
        self.node_types = Some(types);
        Ok(self)
    }

    /// Attaches one regression target per node (all nodes or none).
    pub fn with_targets(mut self, targets: BTreeMap<NodeId, f64>) -> Result<Self, GraphError> {
        for &v in &self.node_ids {
            if !targets.contains_key(&v) {
                return Err(GraphError::PartialLabels(v));
            }
        }
        if let Some(&v) = targets.keys().find(|v| !self.adj.contains_key(v)) {
            return Err(GraphError::UnknownNode(v));
        }
        self.targets = Some(targets);
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adj.values().map(|n| n.len()).sum::<usize>() / 2
    }

    /// Node ids in ascending order.
    pub fn nodes(&self) -> &[NodeId] {
        &self.node_ids
    }

    pub fn node_set(&self) -> NodeSet {
        NodeSet(self.node_ids.clone())
    }

    pub fn contains_node(&self, v: NodeId) -> bool {
        self.adj.contains_key(&v)
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.adj.get(&u).map_or(false, |n| n.contains(&v))
    }

    /// Neighbors of `v` in ascending order; empty for unknown ids.
    pub fn neighbors(&self, v: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adj.get(&v).into_iter().flat_map(|n| n.iter().copied())
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adj.get(&v).map_or(0, |n| n.len())
    }

    /// Edges as `(u, v)` pairs with `u < v`, ascending.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for (&u, nbrs) in &self.adj {
            for &v in nbrs.iter().filter(|&&v| v > u) {
                out.push((u, v));
            }
        }
        out
    }

    pub fn features(&self) -> Option<&BTreeMap<NodeId, Vec<f64>>> {
        self.features.as_ref()
    }

    pub fn labels(&self) -> Option<&BTreeMap<NodeId, u32>> {
        self.labels.as_ref()
    }

    pub fn node_types(&self) -> Option<&BTreeMap<NodeId, u32>> {
        self.node_types.as_ref()
    }

    pub fn targets(&self) -> Option<&BTreeMap<NodeId, f64>> {
        self.targets.as_ref()
    }

    /// Feature dimension, if features are present.
    pub fn feature_dim(&self) -> Option<usize> {
        self.features.as_ref().and_then(|f| f.values().next().map(|v| v.len()))
    }

    /// The subgraph induced by `a`: nodes `a`, exactly the edges with both
    /// endpoints in `a`, per-node metadata restricted.
    pub fn induced_subgraph(&self, a: &NodeSet) -> Result<Graph, GraphError> {
        if let Some(v) = a.iter().find(|&v| !self.adj.contains_key(&v)) {
            return Err(GraphError::UnknownNode(v));
        }
        let adj: BTreeMap<NodeId, BTreeSet<NodeId>> = a
            .iter()
            .map(|v| {
                let nbrs = self.adj[&v].iter().copied().filter(|&w| a.contains(w)).collect();
                (v, nbrs)
            })
            .collect();
        let restrict = |m: &Option<BTreeMap<NodeId, Vec<f64>>>| {
            m.as_ref().map(|m| a.iter().map(|v| (v, m[&v].clone())).collect())
        };
        let restrict_u32 = |m: &Option<BTreeMap<NodeId, u32>>| {
            m.as_ref().map(|m| a.iter().map(|v| (v, m[&v])).collect())
        };
        let restrict_f64 = |m: &Option<BTreeMap<NodeId, f64>>| {
            m.as_ref().map(|m| a.iter().map(|v| (v, m[&v])).collect())
        };
        Ok(Graph {
            node_ids: a.as_slice().to_vec(),
            features: restrict(&self.features),
            labels: restrict_u32(&self.labels),
            node_types: restrict_u32(&self.node_types),
            targets: restrict_f64(&self.targets),
            adj,
        })
    }

    /// True iff every node pair is an edge; the empty graph and single nodes
    /// are complete vacuously.
    pub fn is_complete(&self) -> bool {
        let n = self.num_nodes();
        self.num_edges() == n * n.saturating_sub(1) / 2
    }

    /// All inclusion-maximal cliques, each sorted, the collection sorted.
    ///
    /// Bron–Kerbosch with pivoting over a bitset universe; guarded to 64
    /// nodes because it only serves oracle-scale inputs (clique sets for
    /// decomposable functions, test oracles).
    pub fn maximal_cliques(&self) -> Result<Vec<NodeSet>, GraphError> {
        const GUARD: usize = 64;
        let n = self.num_nodes();
        if n > GUARD {
            return Err(GraphError::TooLarge(n, GUARD));
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        // Dense bitset adjacency over positional indices.
        let idx: BTreeMap<NodeId, usize> =
            self.node_ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut bits = vec![0u64; n];
        for (&u, nbrs) in &self.adj {
            for &v in nbrs {
                bits[idx[&u]] |= 1u64 << idx[&v];
            }
        }
        let full: u64 = if n == 64 { !0 } else { (1u64 << n) - 1 };
        let mut found: Vec<u64> = Vec::new();
        bron_kerbosch(0, full, 0, &bits, &mut found);
        let mut out: Vec<NodeSet> = found
            .into_iter()
            .map(|mask| {
                NodeSet(
                    (0..n)
                        .filter(|&i| mask >> i & 1 == 1)
                        .map(|i| self.node_ids[i])
                        .collect(),
                )
            })
            .collect();
        out.sort();
        Ok(out)
    }

    /// Maximal connected node sets, ordered by smallest member.
    pub fn connected_components(&self) -> Vec<NodeSet> {
        let mut seen: BTreeSet<NodeId> = BTreeSet::new();
        let mut out = Vec::new();
        for &start in &self.node_ids {
            if seen.contains(&start) {
                continue;
            }
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            seen.insert(start);
            while let Some(u) = queue.pop_front() {
                for v in self.neighbors(u) {
                    if seen.insert(v) {
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            out.push(NodeSet::new(comp));
        }
        out
    }

    /// Longest shortest-path hop count over all node pairs. The graph must be
    /// connected; callers handling forests iterate components.
    pub fn diameter(&self) -> Result<usize, GraphError> {
        if self.node_ids.is_empty() {
            return Err(GraphError::Empty);
        }
        let mut best = 0;
        for &s in &self.node_ids {
            let mut dist: BTreeMap<NodeId, usize> = BTreeMap::from([(s, 0)]);
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                let du = dist[&u];
                for v in self.neighbors(u) {
                    if !dist.contains_key(&v) {
                        dist.insert(v, du + 1);
                        queue.push_back(v);
                    }
                }
            }
            if dist.len() != self.node_ids.len() {
                return Err(GraphError::Disconnected);
            }
            best = best.max(dist.values().copied().max().unwrap_or(0));
        }
        Ok(best)
    }
}

/// Bron–Kerbosch with greedy pivoting on bitsets. `r` = current clique,
/// `p` = candidates, `x` = already-covered; maximal cliques are pushed in
/// discovery order and sorted by the caller.
fn bron_kerbosch(r: u64, p: u64, x: u64, adj: &[u64], out: &mut Vec<u64>) {
    if p == 0 && x == 0 {
        out.push(r);
        return;
    }
    // Pivot: the candidate (from p ∪ x) covering the most of p.
    let pivot = {
        let mut best = 0;
        let mut best_cover = u32::MAX;
        let mut pool = p | x;
        while pool != 0 {
            let i = pool.trailing_zeros() as usize;
            pool &= pool - 1;
            let cover = (p & !adj[i]).count_ones();
            if best_cover == u32::MAX || cover < best_cover {
                best_cover = cover;
                best = i;
            }
        }
        best
    };
    let mut candidates = p & !adj[pivot];
    let mut p = p;
    let mut x = x;
    while candidates != 0 {
        let i = candidates.trailing_zeros() as usize;
        let bit = 1u64 << i;
        candidates &= candidates - 1;
        bron_kerbosch(r | bit, p & adj[i], x & adj[i], adj, out);
        p &= !bit;
        x |= bit;
    }
}

// ---------------------------------------------------------------------------
// On-disk format
// ---------------------------------------------------------------------------

/// One node entry of the graph JSON format.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: NodeId,
    #[serde(skip_serializing_if = "Option::is_none")]
    features: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    node_type: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    target: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    nodes: Vec<NodeDoc>,
    edges: Vec<(NodeId, NodeId)>,
}

impl Graph {
    /// Decodes the graph JSON format, enforcing every structural invariant
    /// (`u < v` edge order included).
    pub fn from_json_str(s: &str) -> Result<Graph, GraphError> {
        let doc: GraphDoc =
            serde_json::from_str(s).map_err(|e| GraphError::Decode(e.to_string()))?;
        if let Some((u, v)) = doc.edges.iter().find(|(u, v)| u >= v) {
            return Err(GraphError::Decode(format!(
                "edge [{u}, {v}] violates the u < v convention"
            )));
        }
        let nodes: Vec<NodeId> = doc.nodes.iter().map(|n| n.id).collect();
        let mut g = Graph::new(nodes, doc.edges)?;
        let feats: BTreeMap<NodeId, Vec<f64>> = doc
            .nodes
            .iter()
            .filter_map(|n| n.features.clone().map(|f| (n.id, f)))
            .collect();
        if !feats.is_empty() {
            g = g.with_features(feats)?;
        }
        let labels: BTreeMap<NodeId, u32> =
            doc.nodes.iter().filter_map(|n| n.label.map(|l| (n.id, l))).collect();
        if !labels.is_empty() {
            g = g.with_labels(labels)?;
        }
        let types: BTreeMap<NodeId, u32> =
            doc.nodes.iter().filter_map(|n| n.node_type.map(|t| (n.id, t))).collect();
        if !types.is_empty() {
            g = g.with_node_types(types)?;
        }
        let targets: BTreeMap<NodeId, f64> =
            doc.nodes.iter().filter_map(|n| n.target.map(|t| (n.id, t))).collect();
        if !targets.is_empty() {
            g = g.with_targets(targets)?;
        }
        Ok(g)
    }

    /// Encodes to the canonical JSON form: nodes ascending by id, edges
    /// ascending with `u < v`, no whitespace. Byte-stable for a given graph.
    pub fn to_json_string(&self) -> String {
        let doc = GraphDoc {
            nodes: self
                .node_ids
                .iter()
                .map(|&v| NodeDoc {
                    id: v,
                    features: self.features.as_ref().map(|f| f[&v].clone()),
                    label: self.labels.as_ref().map(|l| l[&v]),
                    node_type: self.node_types.as_ref().map(|t| t[&v]),
                    target: self.targets.as_ref().map(|t| t[&v]),
                })
                .collect(),
            edges: self.edges(),
        };
        serde_json::to_string(&doc).expect("graph serialization cannot fail")
    }
}

/// Decodes a JSON-Lines dataset: one graph object per non-empty line.
pub fn dataset_from_jsonl(s: &str) -> Result<Vec<Graph>, GraphError> {
    s.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            Graph::from_json_str(line)
                .map_err(|e| GraphError::Decode(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// Encodes a dataset as JSON-Lines, one canonical graph object per line.
pub fn dataset_to_jsonl(graphs: &[Graph]) -> String {
    let mut out = String::new();
    for g in graphs {
        out.push_str(&g.to_json_string());
        out.push('\n');
    }
    out
}
