//! The H-tree: a recursive, hierarchical tree expansion of a graph.
//!
//! The root layer of an H-tree is the graph's junction tree. Each bag `B`
//! is then expanded: if the induced subgraph `G[B]` is complete, the bag node
//! directly receives one leaf per member (the star construction, with the
//! star's hub merged into the bag node); otherwise the H-tree of `G[B]` is
//! built recursively, the edges among *its* roots are deleted, and those
//! roots are attached as children of the bag node. Every leaf carries the
//! identity of (and the feature vector of) one source node; a source node
//! appearing in several bags is replicated into several leaves.
//!
//! Node ids are assigned deterministically: the root layer takes ids
//! `0..num_bags` in bag order, and each bag's expansion is appended in bag
//! order, depth first. Two runs on the same graph produce identical H-trees.

use crate::graph::{Graph, GraphError, NodeId, NodeSet};
use crate::treedecomp::{junction_tree, width, TreeDecomposition};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use thiserror::Error;

/// Identifier of a node within one H-tree (dense, `0..num_nodes`).
pub type HNodeId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum HtreeError {
    #[error("cannot build an H-tree for an empty graph")]
    EmptyGraph,
    #[error("epsilon must be positive, got {0}")]
    NonPositiveEps(f64),
    #[error("parameter bound needs n ≥ 1, got {0}")]
    ZeroNodes(usize),
    #[error("epsilon must lie in (0, 1], got {0}")]
    EpsOutOfRange(f64),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// What one H-tree node is: an expanded bag, or a leaf standing in for a
/// source node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HNodeKind {
    Clique(NodeSet),
    Leaf(NodeId),
}

/// The H-tree of a graph: a forest with one tree per source component, whose
/// root layer is the source's junction tree.
#[derive(Debug, Clone, PartialEq)]
pub struct HTree {
    kinds: Vec<HNodeKind>,
    edges: BTreeSet<(HNodeId, HNodeId)>,
    adjacency: Vec<Vec<HNodeId>>,
    roots: Vec<HNodeId>,
    source_nodes: Vec<NodeId>,
    leaf_features: Option<BTreeMap<HNodeId, Vec<f64>>>,
    source_node_types: Option<BTreeMap<NodeId, u32>>,
}

/// Structural counts of an H-tree. `depth` is the longest hop count from any
/// node up to the root layer; `diameter` is the longest shortest path within
/// one tree of the forest (max over trees).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HtreeStats {
    pub num_nodes: usize,
    pub num_leaves: usize,
    pub depth: usize,
    pub diameter: usize,
    pub max_degree: usize,
}

// A relocatable, locally-numbered H-tree under construction. `root_links`
// holds the junction-tree edges among this fragment's roots; when a fragment
// is embedded under a parent bag those links are dropped (the parent takes
// over), and only a top-level fragment keeps them.
struct Fragment {
    kinds: Vec<HNodeKind>,
    edges: Vec<(HNodeId, HNodeId)>,
    root_links: Vec<(HNodeId, HNodeId)>,
    roots: Vec<HNodeId>,
}

/// Builds the H-tree of `g` (all components at once). Errors on empty input.
pub fn build_htree(g: &Graph) -> Result<HTree, HtreeError> {
    if g.num_nodes() == 0 {
        return Err(HtreeError::EmptyGraph);
    }
    let fragment = build_fragment(g);
    let mut edges: BTreeSet<(HNodeId, HNodeId)> = BTreeSet::new();
    for &(a, b) in fragment.edges.iter().chain(fragment.root_links.iter()) {
        edges.insert((a.min(b), a.max(b)));
    }
    let mut adjacency = vec![Vec::new(); fragment.kinds.len()];
    for &(a, b) in &edges {
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
    for list in &mut adjacency {
        list.sort_unstable();
    }
    let leaf_features = g.features().map(|feats| {
        fragment
            .kinds
            .iter()
            .enumerate()
            .filter_map(|(id, kind)| match kind {
                HNodeKind::Leaf(v) => Some((id, feats[v].clone())),
                HNodeKind::Clique(_) => None,
            })
            .collect()
    });
    Ok(HTree {
        kinds: fragment.kinds,
        edges,
        adjacency,
        roots: fragment.roots,
        source_nodes: g.nodes().to_vec(),
        leaf_features,
        source_node_types: g.node_types().cloned(),
    })
}

fn build_fragment(g: &Graph) -> Fragment {
    let td = junction_tree(g);
    let num_bags = td.num_bags();
    let mut kinds: Vec<HNodeKind> =
        td.bags().iter().map(|b| HNodeKind::Clique(b.clone())).collect();
    let root_links: Vec<(HNodeId, HNodeId)> = td.tree_edges().collect();
    let mut edges: Vec<(HNodeId, HNodeId)> = Vec::new();

    for bag_id in 0..num_bags {
        let bag = td.bag(bag_id).clone();
        let sub = g
            .induced_subgraph(&bag)
            .expect("junction-tree bags only contain source nodes");
        // The recursion guard: a decomposition that cannot split the bag any
        // further is treated like the complete case so bag sizes strictly
        // shrink. With the min-fill junction tree this only triggers on
        // degenerate decompositions, but it makes termination unconditional.
        let degenerate = || {
            let sub_td = junction_tree(&sub);
            sub_td.num_bags() == 1 && sub_td.bag(0) == &bag
        };
        if sub.is_complete() || degenerate() {
            // Star construction, hub merged into the bag node: one leaf per
            // member, attached directly.
            for v in bag.iter() {
                let leaf = kinds.len();
                kinds.push(HNodeKind::Leaf(v));
                edges.push((bag_id, leaf));
            }
        } else {
            let inner = build_fragment(&sub);
            let offset = kinds.len();
            kinds.extend(inner.kinds);
            // Keep the sub-H-tree's internal edges, drop the links among its
            // roots, and hand every sub-root to this bag node.
            edges.extend(inner.edges.iter().map(|&(a, b)| (a + offset, b + offset)));
            edges.extend(inner.roots.iter().map(|&r| (bag_id, r + offset)));
        }
    }
    Fragment { kinds, edges, root_links, roots: (0..num_bags).collect() }
}

impl HTree {
    pub fn num_nodes(&self) -> usize {
        self.kinds.len()
    }

    pub fn kind(&self, id: HNodeId) -> &HNodeKind {
        &self.kinds[id]
    }

    pub fn is_leaf(&self, id: HNodeId) -> bool {
        matches!(self.kinds[id], HNodeKind::Leaf(_))
    }

    /// Root-layer node ids, ascending. Their bags form the source graph's
    /// junction tree.
    pub fn roots(&self) -> &[HNodeId] {
        &self.roots
    }

    pub fn is_root(&self, id: HNodeId) -> bool {
        self.roots.binary_search(&id).is_ok()
    }

    /// Edges as `(a, b)` pairs with `a < b`, ascending.
    pub fn edges(&self) -> impl Iterator<Item = (HNodeId, HNodeId)> + '_ {
        self.edges.iter().copied()
    }

    pub fn neighbors(&self, id: HNodeId) -> &[HNodeId] {
        &self.adjacency[id]
    }

    pub fn degree(&self, id: HNodeId) -> usize {
        self.adjacency[id].len()
    }

    /// Source node ids this H-tree was built over, ascending.
    pub fn source_nodes(&self) -> &[NodeId] {
        &self.source_nodes
    }

    /// The source node a leaf stands in for.
    pub fn leaf_source(&self, id: HNodeId) -> Option<NodeId> {
        match self.kinds[id] {
            HNodeKind::Leaf(v) => Some(v),
            HNodeKind::Clique(_) => None,
        }
    }

    /// Leaf id → source node, ascending by leaf id.
    pub fn leaf_map(&self) -> BTreeMap<HNodeId, NodeId> {
        self.kinds
            .iter()
            .enumerate()
            .filter_map(|(id, k)| match k {
                HNodeKind::Leaf(v) => Some((id, *v)),
                HNodeKind::Clique(_) => None,
            })
            .collect()
    }

    /// Replicated leaf feature vectors, when the source graph had features.
    pub fn leaf_features(&self) -> Option<&BTreeMap<HNodeId, Vec<f64>>> {
        self.leaf_features.as_ref()
    }

    /// Node types of the source nodes, when the source graph had them.
    pub fn source_node_types(&self) -> Option<&BTreeMap<NodeId, u32>> {
        self.source_node_types.as_ref()
    }

    /// The bag of a clique node.
    pub fn bag(&self, id: HNodeId) -> Option<&NodeSet> {
        match &self.kinds[id] {
            HNodeKind::Clique(b) => Some(b),
            HNodeKind::Leaf(_) => None,
        }
    }

    /// The root layer as a decomposition of the source graph.
    pub fn root_decomposition(&self) -> TreeDecomposition {
        let bags: Vec<NodeSet> = self
            .roots
            .iter()
            .map(|&r| self.bag(r).expect("roots are clique nodes").clone())
            .collect();
        let index: BTreeMap<HNodeId, usize> =
            self.roots.iter().enumerate().map(|(i, &r)| (r, i)).collect();
        let edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| match (index.get(&a), index.get(&b)) {
                (Some(&ia), Some(&ib)) => Some((ia, ib)),
                _ => None,
            })
            .collect();
        TreeDecomposition::new(bags, edges, self.source_nodes.len())
            .expect("root layer of a well-formed H-tree is a forest")
    }

    /// Inverse of the leaf map: source node → all leaf ids standing for it.
    /// Every source node has at least one leaf.
    pub fn leaf_groups(&self) -> BTreeMap<NodeId, Vec<HNodeId>> {
        let mut groups: BTreeMap<NodeId, Vec<HNodeId>> =
            self.source_nodes.iter().map(|&v| (v, Vec::new())).collect();
        for (id, kind) in self.kinds.iter().enumerate() {
            if let HNodeKind::Leaf(v) = kind {
                groups.get_mut(v).expect("leaf sources are source nodes").push(id);
            }
        }
        groups
    }

    /// Connected components of the H-tree (one per source component),
    /// each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<HNodeId>> {
        let mut seen = vec![false; self.kinds.len()];
        let mut out = Vec::new();
        for start in 0..self.kinds.len() {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in self.neighbors(u) {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            out.push(comp);
        }
        out
    }
}

/// Structural statistics of an H-tree; diameter and depth are computed per
/// tree of the forest and the maxima reported.
pub fn htree_stats(h: &HTree) -> HtreeStats {
    let num_nodes = h.num_nodes();
    let num_leaves = h.kinds.iter().filter(|k| matches!(k, HNodeKind::Leaf(_))).count();
    let max_degree = (0..num_nodes).map(|u| h.degree(u)).max().unwrap_or(0);

    // Depth: multi-source BFS from the root layer.
    let mut depth = 0;
    let mut dist = vec![usize::MAX; num_nodes];
    let mut queue: VecDeque<HNodeId> = VecDeque::new();
    for &r in h.roots() {
        dist[r] = 0;
        queue.push_back(r);
    }
    while let Some(u) = queue.pop_front() {
        for &v in h.neighbors(u) {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                depth = depth.max(dist[v]);
                queue.push_back(v);
            }
        }
    }

    // Diameter per tree: double BFS (exact on trees).
    let mut diameter = 0;
    for comp in h.components() {
        let far = |s: HNodeId| -> (HNodeId, usize) {
            let mut dist: BTreeMap<HNodeId, usize> = BTreeMap::from([(s, 0)]);
            let mut queue = VecDeque::from([s]);
            let (mut best, mut best_d) = (s, 0);
            while let Some(u) = queue.pop_front() {
                let du = dist[&u];
                if du > best_d || (du == best_d && u < best) {
                    best = u;
                    best_d = du;
                }
                for &v in h.neighbors(u) {
                    if !dist.contains_key(&v) {
                        dist.insert(v, du + 1);
                        queue.push_back(v);
                    }
                }
            }
            (best, best_d)
        };
        let (a, _) = far(comp[0]);
        let (_, d) = far(a);
        diameter = diameter.max(d);
    }

    HtreeStats { num_nodes, num_leaves, depth, diameter, max_degree }
}

/// Fan-in of a non-leaf node in the upward-directed H-tree: links toward
/// children count, the link to the parent does not, and links between two
/// root nodes count for neither side (the root layer is read out by a
/// fixed-size summation, not by learned aggregation units).
fn fan_in(h: &HTree, u: HNodeId) -> usize {
    let root_neighbor_links =
        h.neighbors(u).iter().filter(|&&w| h.is_root(u) && h.is_root(w)).count();
    if h.is_root(u) {
        h.degree(u) - root_neighbor_links
    } else {
        h.degree(u) - 1
    }
}

/// Order-of-magnitude estimate (constant 1) of how many aggregation
/// parameters suffice for an `eps`-accurate network on this H-tree: each
/// non-leaf node `u` with fan-in `m` contributes `m · (eps/m)^(−m)`.
/// Monotone decreasing in `eps`.
pub fn param_bound_theorem(h: &HTree, eps: f64) -> Result<f64, HtreeError> {
    if eps <= 0.0 {
        return Err(HtreeError::NonPositiveEps(eps));
    }
    let mut total = 0.0;
    for u in 0..h.num_nodes() {
        if h.is_leaf(u) {
            continue;
        }
        let m = fan_in(h, u) as f64;
        debug_assert!(m >= 1.0, "clique nodes always have children");
        total += m * (eps / m).powf(-m);
    }
    Ok(total)
}

/// Closed-form version of the parameter estimate in terms of graph size and
/// decomposition width: `n · (tw+1)^(2·tw+3) · eps^(−(tw+1))`, constant 1.
/// Linear in `n`.
pub fn param_bound_corollary(n: usize, tw: usize, eps: f64) -> Result<f64, HtreeError> {
    if n == 0 {
        return Err(HtreeError::ZeroNodes(n));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(HtreeError::EpsOutOfRange(eps));
    }
    let t = tw as f64;
    Ok(n as f64 * (t + 1.0).powf(2.0 * t + 3.0) * eps.powf(-(t + 1.0)))
}

/// Convenience: the decomposition width underlying an H-tree (its root
/// layer's width).
pub fn root_width(h: &HTree) -> usize {
    width(&h.root_decomposition()).expect("H-trees have at least one root")
}

// ---------------------------------------------------------------------------
// On-disk format
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HNodeDoc {
    id: usize,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    bag: Option<Vec<NodeId>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    vertex: Option<NodeId>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HTreeDoc {
    nodes: Vec<HNodeDoc>,
    edges: Vec<(usize, usize)>,
    roots: Vec<usize>,
}

impl HTree {
    /// Canonical JSON encoding: nodes ascending by id with
    /// `"kind": "clique" | "leaf"` and the bag or vertex payload, edges
    /// ascending with `a < b`, roots ascending. Byte-stable.
    pub fn to_json_string(&self) -> String {
        let doc = HTreeDoc {
            nodes: self
                .kinds
                .iter()
                .enumerate()
                .map(|(id, kind)| match kind {
                    HNodeKind::Clique(b) => HNodeDoc {
                        id,
                        kind: "clique".to_owned(),
                        bag: Some(b.as_slice().to_vec()),
                        vertex: None,
                    },
                    HNodeKind::Leaf(v) => HNodeDoc {
                        id,
                        kind: "leaf".to_owned(),
                        bag: None,
                        vertex: Some(*v),
                    },
                })
                .collect(),
            edges: self.edges.iter().copied().collect(),
            roots: self.roots.clone(),
        };
        serde_json::to_string(&doc).expect("H-tree serialization cannot fail")
    }
}
