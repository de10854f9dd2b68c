//! Forward passes: the shared message-passing engine over either an H-tree
//! or a plain graph, the two public entry points built on it, and the
//! scripted per-node mode for exact hand-set aggregation programs.

use super::kernels::{axpy, relu, shallow_agg, softmax, ShallowUnit};
use super::{EdgeScalars, HeadKind, IterParams, ModelParams, NnError};
use crate::graph::{Graph, NodeId};
use crate::htree::{HNodeId, HTree};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeMap;

/// What a model runs on: the H-tree of a graph, or the graph itself.
#[derive(Debug, Clone, Copy)]
pub enum Network<'a> {
    Tree(&'a HTree),
    Graph(&'a Graph),
}

// Link flavor, for the optional per-iteration edge scalars. Plain graphs
// treat every edge as a child link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LinkKind {
    Root,
    Child,
}

// How one source node reads its output out of the final hidden states.
#[derive(Debug, Clone)]
pub(crate) enum Readout {
    Node(usize),
    MeanOf(Vec<usize>),
}

// A network lowered to dense indices: initial vectors, adjacency with link
// flavors, and one readout per source node (ascending by node id).
pub(crate) struct Topology {
    pub n: usize,
    pub neighbors: Vec<Vec<(usize, LinkKind)>>,
    pub init: Vec<Vec<f64>>,
    pub readouts: Vec<(NodeId, u32, Readout)>,
}

impl Topology {
    pub(crate) fn build(
        net: Network<'_>,
        x: &BTreeMap<NodeId, Vec<f64>>,
        input_dim: usize,
    ) -> Result<Topology, NnError> {
        let feature = |v: NodeId| -> Result<Vec<f64>, NnError> {
            let f = x.get(&v).ok_or(NnError::MissingFeature(v))?;
            if f.len() != input_dim {
                return Err(NnError::FeatureDim { node: v, got: f.len(), want: input_dim });
            }
            Ok(f.clone())
        };
        match net {
            Network::Tree(h) => {
                let n = h.num_nodes();
                let neighbors = (0..n)
                    .map(|u| {
                        h.neighbors(u)
                            .iter()
                            .map(|&w| {
                                let kind = if h.is_root(u) && h.is_root(w) {
                                    LinkKind::Root
                                } else {
                                    LinkKind::Child
                                };
                                (w, kind)
                            })
                            .collect()
                    })
                    .collect();
                // Leaves carry their source node's features; internal nodes
                // start at zero.
                let init = (0..n)
                    .map(|u| match h.leaf_source(u) {
                        Some(v) => feature(v),
                        None => Ok(vec![0.0; input_dim]),
                    })
                    .collect::<Result<_, _>>()?;
                let types = h.source_node_types();
                let readouts = h
                    .leaf_groups()
                    .into_iter()
                    .map(|(v, leaves)| {
                        let ty = types.and_then(|m| m.get(&v).copied()).unwrap_or(0);
                        (v, ty, Readout::MeanOf(leaves))
                    })
                    .collect();
                Ok(Topology { n, neighbors, init, readouts })
            }
            Network::Graph(g) => {
                let nodes = g.nodes();
                let index: BTreeMap<NodeId, usize> =
                    nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
                let neighbors = nodes
                    .iter()
                    .map(|&v| {
                        g.neighbors(v).map(|w| (index[&w], LinkKind::Child)).collect()
                    })
                    .collect();
                let init = nodes.iter().map(|&v| feature(v)).collect::<Result<_, _>>()?;
                let types = g.node_types();
                let readouts = nodes
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let ty = types.and_then(|m| m.get(&v).copied()).unwrap_or(0);
                        (v, ty, Readout::Node(i))
                    })
                    .collect();
                Ok(Topology { n: nodes.len(), neighbors, init, readouts })
            }
        }
    }
}

// Cached tensors of one iteration, enough to run the exact reverse pass.
pub(crate) struct IterCache {
    /// Aggregated input per node: the closed-neighborhood mean (gcn_mean)
    /// or the scaled neighbor sum (shallow_relu).
    pub agg: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
    pub mask: Option<Vec<Vec<f64>>>,
}

pub(crate) struct RunCache {
    pub iters: Vec<IterCache>,
}

impl RunCache {
    pub(crate) fn final_h<'a>(&'a self, topo: &'a Topology) -> &'a [Vec<f64>] {
        match self.iters.last() {
            Some(it) => &it.post,
            None => &topo.init,
        }
    }
}

pub(crate) fn link_scale(scales: Option<&EdgeScalars>, kind: LinkKind) -> f64 {
    match (scales, kind) {
        (None, _) => 1.0,
        (Some(s), LinkKind::Root) => s.root,
        (Some(s), LinkKind::Child) => s.child,
    }
}

pub(crate) fn link_scale_mut(scales: &mut EdgeScalars, kind: LinkKind) -> &mut f64 {
    match kind {
        LinkKind::Root => &mut scales.root,
        LinkKind::Child => &mut scales.child,
    }
}

// The T synchronous iterations. `dropout` carries the training-time mask
// source; `None` runs in evaluation mode.
pub(crate) fn run_iterations(
    topo: &Topology,
    p: &ModelParams,
    mut dropout: Option<&mut ChaCha20Rng>,
) -> RunCache {
    let mut h: Vec<Vec<f64>> = topo.init.clone();
    let mut iters = Vec::with_capacity(p.config.iterations);
    for (t, iter) in p.iters.iter().enumerate() {
        let scales = p.edge_scalars.as_ref().map(|v| &v[t]);
        let mut agg = Vec::with_capacity(topo.n);
        let mut pre = Vec::with_capacity(topo.n);
        for u in 0..topo.n {
            match iter {
                IterParams::GcnMean { weight, bias } => {
                    // Mean over the closed neighborhood {u} ∪ N(u).
                    let mut m = h[u].clone();
                    for &(w, kind) in &topo.neighbors[u] {
                        axpy(&mut m, link_scale(scales, kind), &h[w]);
                    }
                    let denom = (1 + topo.neighbors[u].len()) as f64;
                    m.iter_mut().for_each(|v| *v /= denom);
                    let mut z = weight.matvec(&m);
                    axpy(&mut z, 1.0, bias);
                    agg.push(m);
                    pre.push(z);
                }
                IterParams::ShallowRelu { w_self, w_nbr, bias } => {
                    let mut s = vec![0.0; h[u].len()];
                    for &(w, kind) in &topo.neighbors[u] {
                        axpy(&mut s, link_scale(scales, kind), &h[w]);
                    }
                    let mut z = w_self.matvec(&h[u]);
                    axpy(&mut z, 1.0, &w_nbr.matvec(&s));
                    axpy(&mut z, 1.0, bias);
                    agg.push(s);
                    pre.push(z);
                }
            }
        }
        let mut post: Vec<Vec<f64>> = pre.iter().map(|z| relu(z)).collect();
        let mask = match dropout.as_deref_mut() {
            Some(rng) if p.config.dropout > 0.0 => {
                let keep = 1.0 - p.config.dropout;
                let mask: Vec<Vec<f64>> = post
                    .iter()
                    .map(|row| {
                        row.iter()
                            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect()
                    })
                    .collect();
                for (row, m) in post.iter_mut().zip(&mask) {
                    for (v, &f) in row.iter_mut().zip(m) {
                        *v *= f;
                    }
                }
                Some(mask)
            }
            _ => None,
        };
        h = post.clone();
        iters.push(IterCache { agg, pre, post, mask });
    }
    RunCache { iters }
}

// Per-readout pooled vectors and head logits.
pub(crate) struct HeadCache {
    pub pooled: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
}

pub(crate) fn apply_heads(
    topo: &Topology,
    p: &ModelParams,
    final_h: &[Vec<f64>],
) -> Result<HeadCache, NnError> {
    let mut pooled = Vec::with_capacity(topo.readouts.len());
    let mut logits = Vec::with_capacity(topo.readouts.len());
    for (_, ty, readout) in &topo.readouts {
        let vec = match readout {
            Readout::Node(i) => final_h[*i].clone(),
            Readout::MeanOf(ids) => {
                let mut m = vec![0.0; final_h[ids[0]].len()];
                for &i in ids {
                    axpy(&mut m, 1.0, &final_h[i]);
                }
                m.iter_mut().for_each(|v| *v /= ids.len() as f64);
                m
            }
        };
        let head = p.head(*ty)?;
        let mut z = head.weight.matvec(&vec);
        axpy(&mut z, 1.0, &head.bias);
        pooled.push(vec);
        logits.push(z);
    }
    Ok(HeadCache { pooled, logits })
}

fn outputs_from_logits(
    topo: &Topology,
    head: HeadKind,
    heads: &HeadCache,
) -> BTreeMap<NodeId, Vec<f64>> {
    topo.readouts
        .iter()
        .zip(&heads.logits)
        .map(|((v, _, _), z)| {
            let out = match head {
                HeadKind::Classification { .. } => softmax(z),
                HeadKind::Regression => z.clone(),
            };
            (*v, out)
        })
        .collect()
}

fn forward(
    net: Network<'_>,
    p: &ModelParams,
    x: &BTreeMap<NodeId, Vec<f64>>,
) -> Result<BTreeMap<NodeId, Vec<f64>>, NnError> {
    p.validate_shapes()?;
    let topo = Topology::build(net, x, p.config.input_dim)?;
    let cache = run_iterations(&topo, p, None);
    let heads = apply_heads(&topo, p, cache.final_h(&topo))?;
    Ok(outputs_from_logits(&topo, p.config.head, &heads))
}

/// Neural-tree forward pass: `T` synchronous message-passing iterations over
/// the H-tree (leaves initialized with their source node's features,
/// internal nodes with zero), then per source node the mean over its leaf
/// group through that node type's linear head — softmax probabilities for
/// classification, a raw scalar for regression. Evaluation mode: dropout
/// off.
pub fn nt_forward(
    h: &HTree,
    p: &ModelParams,
    x: &BTreeMap<NodeId, Vec<f64>>,
) -> Result<BTreeMap<NodeId, Vec<f64>>, NnError> {
    forward(Network::Tree(h), p, x)
}

/// The same engine run directly on the input graph: every node starts from
/// its own features and reads its output from its own final hidden state
/// through the linear head.
pub fn baseline_gnn_forward(
    g: &Graph,
    p: &ModelParams,
    x: &BTreeMap<NodeId, Vec<f64>>,
) -> Result<BTreeMap<NodeId, Vec<f64>>, NnError> {
    forward(Network::Graph(g), p, x)
}

/// Final hidden state of every H-tree node after the `T` iterations —
/// diagnostics and structural tests; no heads applied.
pub fn nt_hidden_states(
    h: &HTree,
    p: &ModelParams,
    x: &BTreeMap<NodeId, Vec<f64>>,
) -> Result<Vec<Vec<f64>>, NnError> {
    p.validate_shapes()?;
    let topo = Topology::build(Network::Tree(h), x, p.config.input_dim)?;
    let cache = run_iterations(&topo, p, None);
    Ok(cache.final_h(&topo).to_vec())
}

// ---------------------------------------------------------------------------
// Scripted per-node mode
// ---------------------------------------------------------------------------

/// Runs a hand-set per-node program of shallow aggregation units on an
/// H-tree, holding scalar state per node. At every step each node feeds
/// `[own value, neighbor values ascending]` into its unit bank for that
/// step; a node without an entry copies its own value. Returns the final
/// scalar per node.
pub fn run_scripted(
    h: &HTree,
    steps: &[BTreeMap<HNodeId, Vec<ShallowUnit>>],
    init: &BTreeMap<HNodeId, f64>,
) -> Vec<f64> {
    let n = h.num_nodes();
    let mut values: Vec<f64> = (0..n).map(|u| init.get(&u).copied().unwrap_or(0.0)).collect();
    for step in steps {
        let mut next = vec![0.0; n];
        for (u, slot) in next.iter_mut().enumerate() {
            let mut inputs = Vec::with_capacity(1 + h.degree(u));
            inputs.push(values[u]);
            inputs.extend(h.neighbors(u).iter().map(|&w| values[w]));
            *slot = match step.get(&u) {
                Some(units) => shallow_agg(&inputs, units),
                None => values[u],
            };
        }
        values = next;
    }
    values
}

/// A scripted program that delivers the sum of the root layer's initial
/// values to every node of the H-tree.
#[derive(Debug, Clone)]
pub struct SumBroadcastProgram {
    pub steps: Vec<BTreeMap<HNodeId, Vec<ShallowUnit>>>,
    /// Number of steps after which every node holds its component's root
    /// sum.
    pub horizon: usize,
}

/// Builds the two-phase copy/sum program: first each root accumulates its
/// subtree total up the root layer's tree (rooted at the lowest root id per
/// component), then the grand total is copied down along a breadth-first
/// tree of the whole H-tree. Initial values sit on the roots (other nodes
/// 0); with all of them in `[0,1]` and each component's total at most 1,
/// every intermediate stays inside the rectifier's linear range, so values
/// representable exactly in binary arrive exactly.
pub fn sum_broadcast_program(h: &HTree) -> SumBroadcastProgram {
    let n = h.num_nodes();
    let input_len = |u: HNodeId| 1 + h.degree(u);
    // Position of neighbor w in u's scripted input vector.
    let pos_of = |u: HNodeId, w: HNodeId| {
        1 + h.neighbors(u).binary_search(&w).expect("w is a neighbor of u")
    };

    // Root-layer tree structure, per component: parents and heights with
    // respect to the lowest-id root.
    let mut root_parent: BTreeMap<HNodeId, Option<HNodeId>> = BTreeMap::new();
    let mut root_children: BTreeMap<HNodeId, Vec<HNodeId>> = BTreeMap::new();
    let mut anchors: Vec<HNodeId> = Vec::new();
    for &r in h.roots() {
        if root_parent.contains_key(&r) {
            continue;
        }
        anchors.push(r);
        root_parent.insert(r, None);
        root_children.insert(r, Vec::new());
        let mut queue = std::collections::VecDeque::from([r]);
        while let Some(u) = queue.pop_front() {
            for &w in h.neighbors(u) {
                if h.is_root(w) && !root_parent.contains_key(&w) {
                    root_parent.insert(w, Some(u));
                    root_children.entry(u).or_default().push(w);
                    root_children.insert(w, Vec::new());
                    queue.push_back(w);
                }
            }
        }
    }
    // Height of each root in its rooted tree (leaves 0): the step at which
    // it folds its children's finished subtotals into its own value.
    let mut height: BTreeMap<HNodeId, usize> = BTreeMap::new();
    fn height_of(
        u: HNodeId,
        children: &BTreeMap<HNodeId, Vec<HNodeId>>,
        memo: &mut BTreeMap<HNodeId, usize>,
    ) -> usize {
        if let Some(&d) = memo.get(&u) {
            return d;
        }
        let d = children[&u]
            .iter()
            .map(|&c| height_of(c, children, memo) + 1)
            .max()
            .unwrap_or(0);
        memo.insert(u, d);
        d
    }
    let sum_phase = anchors
        .iter()
        .map(|&a| height_of(a, &root_children, &mut height))
        .max()
        .unwrap_or(0);

    // Breadth-first tree over the whole H-tree from each anchor, for the
    // broadcast phase.
    let mut bfs_parent: Vec<Option<HNodeId>> = vec![None; n];
    let mut bfs_dist: Vec<usize> = vec![usize::MAX; n];
    for &a in &anchors {
        bfs_dist[a] = 0;
        let mut queue = std::collections::VecDeque::from([a]);
        while let Some(u) = queue.pop_front() {
            for &w in h.neighbors(u) {
                if bfs_dist[w] == usize::MAX {
                    bfs_dist[w] = bfs_dist[u] + 1;
                    bfs_parent[w] = Some(u);
                    queue.push_back(w);
                }
            }
        }
    }
    let broadcast_phase = bfs_dist.iter().copied().max().unwrap_or(0);

    let mut steps = Vec::with_capacity(sum_phase + broadcast_phase);
    for k in 1..=sum_phase {
        let mut step = BTreeMap::new();
        for &r in h.roots() {
            if height[&r] == k {
                let mut positions = vec![0usize];
                positions.extend(root_children[&r].iter().map(|&c| pos_of(r, c)));
                step.insert(r, vec![ShallowUnit::sum(&positions, input_len(r))]);
            }
            // Other nodes fall back to the implicit self copy.
        }
        steps.push(step);
    }
    for _ in 1..=broadcast_phase {
        let mut step = BTreeMap::new();
        for u in 0..n {
            if let Some(parent) = bfs_parent[u] {
                step.insert(u, vec![ShallowUnit::copy(pos_of(u, parent), input_len(u))]);
            }
        }
        steps.push(step);
    }
    SumBroadcastProgram { horizon: steps.len(), steps }
}
