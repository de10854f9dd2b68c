//! Tree decompositions via junction trees.
//!
//! The construction pipeline is the classic one: triangulate the graph with
//! the min-fill elimination heuristic, read the maximal cliques off the
//! perfect elimination ordering, and connect them by a maximum-weight
//! spanning tree of the clique intersection graph. Every tie is broken by
//! ascending node/bag ids, so the decomposition is a pure function of the
//! input graph.
//!
//! A decomposition is *valid* when it has the two defining properties:
//! every source edge lies inside some bag (covering), and for every source
//! node the bags containing it induce a connected subtree (connectedness).
//! [`validate_decomposition`] checks both and reports witnesses; its verdict
//! is the ground truth the rest of the crate certifies against.

use crate::graph::{Graph, GraphError, NodeId, NodeSet};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use thiserror::Error;

/// Identifier of a bag within one decomposition (dense, `0..num_bags`).
pub type BagId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum DecompError {
    #[error("decomposition has no bags")]
    Empty,
    #[error("graph has {0} nodes, exceeding the {1}-node guard for exact treewidth")]
    TooLarge(usize, usize),
    #[error("bag edge references unknown bag id {0}")]
    UnknownBag(BagId),
    #[error("bag edges contain a cycle")]
    CyclicBagEdges,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// A tree (or forest, for disconnected sources) of node bags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeDecomposition {
    bags: Vec<NodeSet>,
    tree_edges: BTreeSet<(BagId, BagId)>,
    source_n: usize,
}

impl TreeDecomposition {
    /// Assembles a decomposition from parts, checking only structural
    /// well-formedness (edge endpoints exist, edge set is acyclic). Validity
    /// for a particular graph is a separate question for
    /// [`validate_decomposition`].
    pub fn new(
        bags: Vec<NodeSet>,
        tree_edges: Vec<(BagId, BagId)>,
        source_n: usize,
    ) -> Result<Self, DecompError> {
        let n = bags.len();
        let mut canon = BTreeSet::new();
        for (a, b) in tree_edges {
            if a >= n {
                return Err(DecompError::UnknownBag(a));
            }
            if b >= n {
                return Err(DecompError::UnknownBag(b));
            }
            canon.insert((a.min(b), a.max(b)));
        }
        let td = TreeDecomposition { bags, tree_edges: canon, source_n };
        if td.has_cycle() {
            return Err(DecompError::CyclicBagEdges);
        }
        Ok(td)
    }

    fn has_cycle(&self) -> bool {
        // A forest has |edges| = |nodes| − |components|.
        let mut uf = UnionFind::new(self.bags.len());
        for &(a, b) in &self.tree_edges {
            if !uf.union(a, b) {
                return true;
            }
        }
        false
    }

    pub fn num_bags(&self) -> usize {
        self.bags.len()
    }

    pub fn bag(&self, id: BagId) -> &NodeSet {
        &self.bags[id]
    }

    pub fn bags(&self) -> &[NodeSet] {
        &self.bags
    }

    /// Bag-tree edges as `(a, b)` with `a < b`, ascending.
    pub fn tree_edges(&self) -> impl Iterator<Item = (BagId, BagId)> + '_ {
        self.tree_edges.iter().copied()
    }

    pub fn bag_neighbors(&self, id: BagId) -> Vec<BagId> {
        let mut out: Vec<BagId> = self
            .tree_edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == id {
                    Some(b)
                } else if b == id {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Node count of the graph this decomposition was built for.
    pub fn source_n(&self) -> usize {
        self.source_n
    }

    /// Bag ids grouped into trees of the forest, each group sorted, groups
    /// ordered by smallest member.
    pub fn forest_components(&self) -> Vec<Vec<BagId>> {
        let mut uf = UnionFind::new(self.bags.len());
        for &(a, b) in &self.tree_edges {
            uf.union(a, b);
        }
        let mut groups: BTreeMap<usize, Vec<BagId>> = BTreeMap::new();
        for id in 0..self.bags.len() {
            groups.entry(uf.find(id)).or_default().push(id);
        }
        let mut out: Vec<Vec<BagId>> = groups.into_values().collect();
        out.sort_by_key(|g| g[0]);
        out
    }
}

/// Size of the largest bag minus one.
pub fn width(td: &TreeDecomposition) -> Result<usize, DecompError> {
    td.bags
        .iter()
        .map(NodeSet::len)
        .max()
        .map(|m| m.saturating_sub(1))
        .ok_or(DecompError::Empty)
}

// ---------------------------------------------------------------------------
// Triangulation
// ---------------------------------------------------------------------------

/// Result of [`triangulate`]: the chordal supergraph, the added fill edges,
/// and a perfect elimination ordering of the chordal graph.
#[derive(Debug, Clone)]
pub struct Triangulation {
    pub chordal: Graph,
    pub fill_edges: Vec<(NodeId, NodeId)>,
    pub elimination_order: Vec<NodeId>,
}

/// Min-fill triangulation: repeatedly eliminate the vertex whose neighborhood
/// needs the fewest fill edges to become a clique (ties → lowest id), adding
/// those fill edges. The elimination order produced is a perfect elimination
/// ordering of the returned chordal graph.
pub fn triangulate(g: &Graph) -> Triangulation {
    let mut adj: BTreeMap<NodeId, BTreeSet<NodeId>> =
        g.nodes().iter().map(|&v| (v, g.neighbors(v).collect())).collect();
    let mut remaining: BTreeSet<NodeId> = g.nodes().iter().copied().collect();
    let mut fill: Vec<(NodeId, NodeId)> = Vec::new();
    let mut order: Vec<NodeId> = Vec::with_capacity(remaining.len());

    let missing_pairs = |adj: &BTreeMap<NodeId, BTreeSet<NodeId>>, v: NodeId| -> usize {
        let nbrs: Vec<NodeId> = adj[&v].iter().copied().collect();
        let mut count = 0;
        for (i, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[i + 1..] {
                if !adj[&a].contains(&b) {
                    count += 1;
                }
            }
        }
        count
    };

    while !remaining.is_empty() {
        // Ascending iteration + strict improvement keeps the lowest id on ties.
        let mut v = *remaining.iter().next().unwrap();
        let mut best = usize::MAX;
        for &u in &remaining {
            let c = missing_pairs(&adj, u);
            if c < best {
                best = c;
                v = u;
            }
        }
        let nbrs: Vec<NodeId> = adj[&v].iter().copied().collect();
        for (i, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[i + 1..] {
                if adj.get_mut(&a).unwrap().insert(b) {
                    adj.get_mut(&b).unwrap().insert(a);
                    fill.push((a.min(b), a.max(b)));
                }
            }
        }
        for &w in &nbrs {
            adj.get_mut(&w).unwrap().remove(&v);
        }
        adj.remove(&v);
        remaining.remove(&v);
        order.push(v);
    }

    fill.sort_unstable();
    let mut all_edges = g.edges();
    all_edges.extend_from_slice(&fill);
    let chordal = Graph::new(g.nodes().to_vec(), all_edges)
        .expect("fill edges cannot break graph invariants");
    Triangulation { chordal, fill_edges: fill, elimination_order: order }
}

// ---------------------------------------------------------------------------
// Junction tree
// ---------------------------------------------------------------------------

/// Builds the junction tree (forest, for disconnected inputs) of `g`:
/// bags are the maximal cliques of the min-fill triangulation, connected by
/// a maximum-weight spanning tree of the clique intersection graph
/// (weight = bag overlap; Kruskal, descending weight, ascending bag-id pair
/// on ties). Bags are numbered in lexicographic order of their contents.
pub fn junction_tree(g: &Graph) -> TreeDecomposition {
    let tri = triangulate(g);
    let bags = chordal_maximal_cliques(&tri);
    let mut candidates: Vec<(usize, BagId, BagId)> = Vec::new();
    for i in 0..bags.len() {
        for j in i + 1..bags.len() {
            let w = bags[i].intersection_size(&bags[j]);
            if w > 0 {
                candidates.push((w, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut uf = UnionFind::new(bags.len());
    let mut edges = Vec::new();
    for (_, i, j) in candidates {
        if uf.union(i, j) {
            edges.push((i, j));
        }
    }
    TreeDecomposition::new(bags, edges, g.num_nodes())
        .expect("spanning-tree construction cannot produce a cycle")
}

/// Maximal cliques of a chordal graph, read off the elimination order:
/// the candidate clique of `v` is `v` plus its later-eliminated neighbors;
/// non-maximal candidates are filtered out. Returned in lexicographic order.
fn chordal_maximal_cliques(tri: &Triangulation) -> Vec<NodeSet> {
    let position: BTreeMap<NodeId, usize> =
        tri.elimination_order.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut candidates: Vec<NodeSet> = tri
        .elimination_order
        .iter()
        .map(|&v| {
            let mut c: Vec<NodeId> = tri
                .chordal
                .neighbors(v)
                .filter(|w| position[w] > position[&v])
                .collect();
            c.push(v);
            NodeSet::new(c)
        })
        .collect();
    candidates.sort_by_key(|c| std::cmp::Reverse(c.len()));
    let mut maximal: Vec<NodeSet> = Vec::new();
    for c in candidates {
        if !maximal.iter().any(|m| c.is_subset_of(m)) {
            maximal.push(c);
        }
    }
    maximal.sort();
    maximal
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// One violated decomposition property, with a witness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// A source edge contained in no bag.
    UncoveredEdge { edge: (NodeId, NodeId) },
    /// A source node whose bags do not induce a connected subtree.
    DisconnectedNode { node: NodeId, bags_containing: Vec<BagId> },
    /// A bag mentions a node the graph does not have.
    ForeignNode { bag: BagId, node: NodeId },
    /// A source node contained in no bag.
    MissingNode { node: NodeId },
}

/// Outcome of [`validate_decomposition`]: empty iff the decomposition is
/// valid for the graph. Violations are data, not errors.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the two defining decomposition properties (covering and
/// connectedness) plus node sanity, reporting a witness per violation.
pub fn validate_decomposition(g: &Graph, td: &TreeDecomposition) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (id, bag) in td.bags.iter().enumerate() {
        for v in bag.iter() {
            if !g.contains_node(v) {
                report.violations.push(Violation::ForeignNode { bag: id, node: v });
            }
        }
    }
    for (u, v) in g.edges() {
        if !td.bags.iter().any(|b| b.contains(u) && b.contains(v)) {
            report.violations.push(Violation::UncoveredEdge { edge: (u, v) });
        }
    }
    for &v in g.nodes() {
        let holding: Vec<BagId> = (0..td.bags.len()).filter(|&i| td.bags[i].contains(v)).collect();
        match holding.first() {
            None => report.violations.push(Violation::MissingNode { node: v }),
            Some(&start) => {
                // BFS over tree edges restricted to bags holding v.
                let holding_set: BTreeSet<BagId> = holding.iter().copied().collect();
                let mut seen = BTreeSet::from([start]);
                let mut queue = VecDeque::from([start]);
                while let Some(b) = queue.pop_front() {
                    for nb in td.bag_neighbors(b) {
                        if holding_set.contains(&nb) && seen.insert(nb) {
                            queue.push_back(nb);
                        }
                    }
                }
                if seen.len() != holding.len() {
                    report
                        .violations
                        .push(Violation::DisconnectedNode { node: v, bags_containing: holding });
                }
            }
        }
    }
    report
}

// ---------------------------------------------------------------------------
// Exact treewidth oracle
// ---------------------------------------------------------------------------

/// Exact treewidth by dynamic programming over elimination-order prefixes
/// (test oracle; guarded to 10 nodes).
///
/// For a subset `S` of vertices, `f(S)` is the best achievable maximum
/// elimination degree when exactly the vertices of `S` are eliminated first:
/// `f(S) = min over v ∈ S of max(f(S \ v), q(S, v))` where `q(S, v)` counts
/// the vertices outside `S` reachable from `v` through `S`. The treewidth is
/// `f(V)` (and 0 for the empty graph).
pub fn exact_treewidth(g: &Graph) -> Result<usize, DecompError> {
    const GUARD: usize = 10;
    let n = g.num_nodes();
    if n > GUARD {
        return Err(DecompError::TooLarge(n, GUARD));
    }
    if n == 0 {
        return Ok(0);
    }
    let ids = g.nodes();
    let adj: Vec<u32> = ids
        .iter()
        .map(|&v| {
            let mut m = 0u32;
            for w in g.neighbors(v) {
                m |= 1 << ids.binary_search(&w).unwrap();
            }
            m
        })
        .collect();

    // q(S, v): vertices outside S reachable from v with intermediates in S\{v}.
    let reach_degree = |s: u32, v: usize| -> u32 {
        let mut frontier = 1u32 << v;
        let mut seen = frontier;
        let inside = s & !(1 << v);
        let mut outside = 0u32;
        while frontier != 0 {
            let mut next = 0u32;
            let mut f = frontier;
            while f != 0 {
                let i = f.trailing_zeros() as usize;
                f &= f - 1;
                next |= adj[i] & !seen;
            }
            seen |= next;
            outside |= next & !inside & !(1 << v);
            frontier = next & inside;
        }
        outside.count_ones()
    };

    let full = (1u32 << n) - 1;
    let mut f = vec![0u32; (full + 1) as usize];
    for s in 1..=full {
        let mut best = u32::MAX;
        let mut set = s;
        while set != 0 {
            let v = set.trailing_zeros() as usize;
            set &= set - 1;
            let candidate = f[(s & !(1 << v)) as usize].max(reach_degree(s, v));
            best = best.min(candidate);
        }
        f[s as usize] = best;
    }
    Ok(f[full as usize] as usize)
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when `a` and `b` were already connected.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}
