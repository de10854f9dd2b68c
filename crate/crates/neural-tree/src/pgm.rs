//! Clique-decomposable functions and discrete graphical models.
//!
//! A compatible function on a graph is a sum of one term per maximal clique,
//! `f(x) = Σ_C θ_C(x_C)`. Terms are either discrete log-potential tables or
//! continuous piecewise-linear handles on `[0,1]^|C|` with a declared
//! Lipschitz constant. On top of that this module provides:
//!
//! - `factorize`: the ordered scan that partitions the cliques across the
//!   bags of a tree decomposition, giving per-root components `γ_r` with
//!   `Σ_r γ_r = f` and each `γ_r` reading only its own bag;
//! - exact inference for the discrete case, twice: brute-force enumeration
//!   of the joint (the test oracle) and two-pass sum-product calibration on
//!   the junction tree — the pair must always agree;
//! - exhaustive MAP labeling with a lexicographic tie rule;
//! - `moralize` for turning a directed model's structure into the
//!   undirected input graph;
//! - seeded random generators for both term kinds.
//!
//! All potentials live in log space; inference exponentiates with
//! max-subtraction only at well-contained points.

use crate::graph::{Graph, GraphError, NodeId, NodeSet};
use crate::treedecomp::{junction_tree, BagId, TreeDecomposition};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use thiserror::Error;

/// Hard ceiling on enumerated joint state spaces (`D^n` and `L^n`).
pub const MAX_JOINT_STATES: usize = 1 << 20;

#[derive(Debug, Error, PartialEq)]
pub enum PgmError {
    #[error("assignment is missing a value for node {0}")]
    MissingValue(NodeId),
    #[error("node {node} has a {got} value where a {want} value is needed")]
    WrongValueKind { node: NodeId, got: &'static str, want: &'static str },
    #[error("node {node} has state {got}, but the domain size is {domain}")]
    StateOutOfRange { node: NodeId, got: usize, domain: usize },
    #[error("node {node} has value {got}, outside the unit interval")]
    RealOutOfRange { node: NodeId, got: f64 },
    #[error("clique #{0} fits inside no bag of the decomposition")]
    UnassignableClique(usize),
    #[error("joint state space of {0} exceeds the enumeration ceiling of {MAX_JOINT_STATES}")]
    StateSpaceTooLarge(String),
    #[error("model mixes discrete and continuous clique terms")]
    MixedTermKinds,
    #[error("clique terms disagree on domain size ({0} vs {1})")]
    DomainMismatch(usize, usize),
    #[error("domain size must be at least 1")]
    EmptyDomain,
    #[error("directed input contains a cycle")]
    CyclicInput,
    #[error("clique list does not match the graph's maximal cliques")]
    CliquesNotMaximal,
    #[error("table for clique #{clique} has {got} entries, expected {want}")]
    TableSize { clique: usize, got: usize, want: usize },
    #[error("table for clique #{clique} contains a non-finite entry")]
    NonFiniteEntry { clique: usize },
    #[error("malformed model document: {0}")]
    Decode(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

// ---------------------------------------------------------------------------
// Values and clique terms
// ---------------------------------------------------------------------------

/// One node's value in an assignment: a discrete state index or a real in
/// the unit interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    State(usize),
    Real(f64),
}

/// A full assignment of node values.
pub type Assignment = BTreeMap<NodeId, Value>;

/// A discrete log-potential table over one clique. Entries are indexed in
/// row-major order over the clique's nodes sorted ascending: the first node
/// varies slowest, the last fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTable {
    pub domain: usize,
    pub entries: Vec<f64>,
}

impl DiscreteTable {
    fn index(&self, states: &[usize]) -> usize {
        states.iter().fold(0, |acc, &s| acc * self.domain + s)
    }
}

/// A continuous clique term: the average of one piecewise-linear curve per
/// member node, each sampled on a 17-knot uniform grid over `[0,1]`. With
/// every curve `L`-Lipschitz and `[0,1]`-valued, the average is `L`-Lipschitz
/// in the max-norm and `[0,1]`-valued.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    pub lipschitz: f64,
    /// One knot vector per clique member, ascending by node id.
    pub knots: Vec<Vec<f64>>,
}

pub const PWL_KNOTS: usize = 17;

impl PiecewiseLinear {
    fn eval_curve(knots: &[f64], x: f64) -> f64 {
        let t = x * (PWL_KNOTS - 1) as f64;
        let j = (t.floor() as usize).min(PWL_KNOTS - 2);
        let frac = t - j as f64;
        knots[j] * (1.0 - frac) + knots[j + 1] * frac
    }

    fn eval(&self, xs: &[f64]) -> f64 {
        let sum: f64 = self
            .knots
            .iter()
            .zip(xs)
            .map(|(k, &x)| Self::eval_curve(k, x))
            .sum();
        sum / self.knots.len() as f64
    }
}

/// One clique's term of a compatible function.
#[derive(Debug, Clone, PartialEq)]
pub enum CliqueFn {
    Discrete(DiscreteTable),
    Continuous(PiecewiseLinear),
}

// ---------------------------------------------------------------------------
// Compatible functions
// ---------------------------------------------------------------------------

/// A function that decomposes over the maximal cliques of its graph:
/// `f(x) = Σ_C θ_C(x_C)`, one term per clique.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatibleFunction {
    source_graph: Graph,
    cliques: Vec<NodeSet>,
    clique_fns: Vec<CliqueFn>,
}

impl CompatibleFunction {
    /// Wraps one term per maximal clique of `g`, in the clique order given
    /// by [`Graph::maximal_cliques`].
    pub fn new(g: Graph, clique_fns: Vec<CliqueFn>) -> Result<Self, PgmError> {
        let cliques = g.maximal_cliques()?;
        if cliques.len() != clique_fns.len() {
            return Err(PgmError::CliquesNotMaximal);
        }
        for (i, (c, f)) in cliques.iter().zip(&clique_fns).enumerate() {
            match f {
                CliqueFn::Discrete(t) => {
                    if t.domain == 0 {
                        return Err(PgmError::EmptyDomain);
                    }
                    let want = t
                        .domain
                        .checked_pow(c.len() as u32)
                        .ok_or_else(|| PgmError::StateSpaceTooLarge(format!("{}^{}", t.domain, c.len())))?;
                    if t.entries.len() != want {
                        return Err(PgmError::TableSize { clique: i, got: t.entries.len(), want });
                    }
                    if t.entries.iter().any(|e| !e.is_finite()) {
                        return Err(PgmError::NonFiniteEntry { clique: i });
                    }
                }
                CliqueFn::Continuous(p) => {
                    if p.knots.len() != c.len() || p.knots.iter().any(|k| k.len() != PWL_KNOTS) {
                        return Err(PgmError::Decode("knot grid shape mismatch".into()));
                    }
                }
            }
        }
        Ok(CompatibleFunction { source_graph: g, cliques, clique_fns })
    }

    pub fn source_graph(&self) -> &Graph {
        &self.source_graph
    }

    /// The maximal cliques of the source graph, canonical order.
    pub fn cliques(&self) -> &[NodeSet] {
        &self.cliques
    }

    pub fn clique_fns(&self) -> &[CliqueFn] {
        &self.clique_fns
    }

    /// One term evaluated on an assignment (only the clique's own values are
    /// read).
    pub fn term(&self, idx: usize, x: &Assignment) -> Result<f64, PgmError> {
        let clique = &self.cliques[idx];
        match &self.clique_fns[idx] {
            CliqueFn::Discrete(t) => {
                let mut states = Vec::with_capacity(clique.len());
                for v in clique.iter() {
                    match x.get(&v) {
                        None => return Err(PgmError::MissingValue(v)),
                        Some(Value::Real(_)) => {
                            return Err(PgmError::WrongValueKind { node: v, got: "real", want: "state" })
                        }
                        Some(Value::State(s)) => {
                            if *s >= t.domain {
                                return Err(PgmError::StateOutOfRange { node: v, got: *s, domain: t.domain });
                            }
                            states.push(*s);
                        }
                    }
                }
                Ok(t.entries[t.index(&states)])
            }
            CliqueFn::Continuous(p) => {
                let mut xs = Vec::with_capacity(clique.len());
                for v in clique.iter() {
                    match x.get(&v) {
                        None => return Err(PgmError::MissingValue(v)),
                        Some(Value::State(_)) => {
                            return Err(PgmError::WrongValueKind { node: v, got: "state", want: "real" })
                        }
                        Some(Value::Real(r)) => {
                            if !(0.0..=1.0).contains(r) {
                                return Err(PgmError::RealOutOfRange { node: v, got: *r });
                            }
                            xs.push(*r);
                        }
                    }
                }
                Ok(p.eval(&xs))
            }
        }
    }

    /// Convenience: evaluate with discrete states only.
    pub fn eval_states(&self, x: &BTreeMap<NodeId, usize>) -> Result<f64, PgmError> {
        let assignment: Assignment = x.iter().map(|(&v, &s)| (v, Value::State(s))).collect();
        eval_compatible(self, &assignment)
    }

    /// Convenience: evaluate with real values only.
    pub fn eval_reals(&self, x: &BTreeMap<NodeId, f64>) -> Result<f64, PgmError> {
        let assignment: Assignment = x.iter().map(|(&v, &r)| (v, Value::Real(r))).collect();
        eval_compatible(self, &assignment)
    }
}

/// `f(x) = Σ_C θ_C(x_C)` over all maximal cliques.
pub fn eval_compatible(f: &CompatibleFunction, x: &Assignment) -> Result<f64, PgmError> {
    (0..f.cliques.len()).map(|i| f.term(i, x)).sum()
}

// ---------------------------------------------------------------------------
// Factorization across a tree decomposition
// ---------------------------------------------------------------------------

/// A partition of a compatible function's cliques across the bags of a tree
/// decomposition: `f = Σ_r γ_r` with `γ_r = Σ_{C ∈ 𝒞_r} θ_C`, and each
/// `γ_r` reading only values of nodes inside bag `B_r`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Factorization {
    ordered_roots: Vec<BagId>,
    assignment: BTreeMap<BagId, Vec<usize>>,
}

impl Factorization {
    /// The visit order `r_1 … r_|R|` used by the assigning scan.
    pub fn ordered_roots(&self) -> &[BagId] {
        &self.ordered_roots
    }

    /// Clique indices assigned to a root's bag (possibly empty).
    pub fn cliques_of(&self, r: BagId) -> &[usize] {
        &self.assignment[&r]
    }

    /// The component `γ_r` evaluated on an assignment.
    pub fn gamma(&self, f: &CompatibleFunction, r: BagId, x: &Assignment) -> Result<f64, PgmError> {
        self.assignment[&r].iter().map(|&c| f.term(c, x)).sum()
    }
}

// Deterministic root order: BFS over the decomposition's tree from the
// lowest bag id, neighbors ascending, repeated per forest component.
fn root_order(td: &TreeDecomposition) -> Vec<BagId> {
    let mut seen = vec![false; td.num_bags()];
    let mut order = Vec::with_capacity(td.num_bags());
    for start in 0..td.num_bags() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(b) = queue.pop_front() {
            order.push(b);
            for nb in td.bag_neighbors(b) {
                if !seen[nb] {
                    seen[nb] = true;
                    queue.push_back(nb);
                }
            }
        }
    }
    order
}

/// Partitions the cliques of `f` over the bags of `td`: scanning the roots
/// in BFS order from the lowest bag id, each root claims every still
/// unclaimed clique that fits inside its bag.
pub fn factorize(f: &CompatibleFunction, td: &TreeDecomposition) -> Result<Factorization, PgmError> {
    let ordered_roots = root_order(td);
    let mut assignment: BTreeMap<BagId, Vec<usize>> =
        ordered_roots.iter().map(|&r| (r, Vec::new())).collect();
    let mut claimed = vec![false; f.cliques.len()];
    for &r in &ordered_roots {
        let bag = td.bag(r);
        for (i, c) in f.cliques.iter().enumerate() {
            if !claimed[i] && c.is_subset_of(bag) {
                claimed[i] = true;
                assignment.get_mut(&r).expect("all roots pre-inserted").push(i);
            }
        }
    }
    if let Some(orphan) = claimed.iter().position(|&c| !c) {
        return Err(PgmError::UnassignableClique(orphan));
    }
    Ok(Factorization { ordered_roots, assignment })
}

// ---------------------------------------------------------------------------
// Discrete models and exact inference
// ---------------------------------------------------------------------------

/// A compatible function whose terms are all discrete tables over one shared
/// domain, read as the log-density `p(x) ∝ exp f(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePgm {
    f: CompatibleFunction,
    domain: usize,
}

impl DiscretePgm {
    pub fn new(f: CompatibleFunction) -> Result<Self, PgmError> {
        let mut domain = None;
        for fun in &f.clique_fns {
            match fun {
                CliqueFn::Continuous(_) => return Err(PgmError::MixedTermKinds),
                CliqueFn::Discrete(t) => match domain {
                    None => domain = Some(t.domain),
                    Some(d) if d != t.domain => return Err(PgmError::DomainMismatch(d, t.domain)),
                    Some(_) => {}
                },
            }
        }
        let domain = domain.unwrap_or(1);
        if domain == 0 {
            return Err(PgmError::EmptyDomain);
        }
        Ok(DiscretePgm { f, domain })
    }

    pub fn function(&self) -> &CompatibleFunction {
        &self.f
    }

    pub fn domain(&self) -> usize {
        self.domain
    }

    pub fn source_graph(&self) -> &Graph {
        &self.f.source_graph
    }

    // Positions of each clique's members within the sorted node list, for
    // enumeration loops that index assignments positionally.
    fn clique_positions(&self) -> Vec<Vec<usize>> {
        let nodes = self.f.source_graph.nodes();
        self.f
            .cliques
            .iter()
            .map(|c| {
                c.iter()
                    .map(|v| nodes.binary_search(&v).expect("clique nodes are graph nodes"))
                    .collect()
            })
            .collect()
    }

    // f evaluated on a positional assignment (one state per node, node order).
    fn eval_positional(&self, states: &[usize], positions: &[Vec<usize>]) -> f64 {
        self.f
            .clique_fns
            .iter()
            .zip(positions)
            .map(|(fun, pos)| match fun {
                CliqueFn::Discrete(t) => {
                    let idx = pos.iter().fold(0, |acc, &p| acc * t.domain + states[p]);
                    t.entries[idx]
                }
                CliqueFn::Continuous(_) => unreachable!("discrete models hold tables only"),
            })
            .sum()
    }
}

fn checked_state_space(base: usize, exp: usize, what: &str) -> Result<usize, PgmError> {
    let too_big = || PgmError::StateSpaceTooLarge(format!("{base}^{exp} ({what})"));
    let size = base.checked_pow(exp.try_into().map_err(|_| too_big())?).ok_or_else(too_big)?;
    if size > MAX_JOINT_STATES {
        return Err(too_big());
    }
    Ok(size)
}

// Advances a positional assignment in lexicographic order (first node most
// significant). Returns false after the last state.
fn next_state(states: &mut [usize], domain: usize) -> bool {
    for slot in states.iter_mut().rev() {
        *slot += 1;
        if *slot < domain {
            return true;
        }
        *slot = 0;
    }
    false
}

/// Exact per-node marginals by full enumeration of `exp f / Z` — the
/// reference oracle every faster path must match.
pub fn brute_force_marginals(m: &DiscretePgm) -> Result<BTreeMap<NodeId, Vec<f64>>, PgmError> {
    let nodes = m.f.source_graph.nodes();
    let n = nodes.len();
    checked_state_space(m.domain, n, "joint enumeration")?;
    let positions = m.clique_positions();

    // Max-subtracted exponentiation keeps the weights well-scaled.
    let mut states = vec![0usize; n];
    let mut max_log = f64::NEG_INFINITY;
    loop {
        max_log = max_log.max(m.eval_positional(&states, &positions));
        if !next_state(&mut states, m.domain) {
            break;
        }
    }

    let mut accum = vec![vec![0.0f64; m.domain]; n];
    let mut z = 0.0f64;
    let mut states = vec![0usize; n];
    loop {
        let w = (m.eval_positional(&states, &positions) - max_log).exp();
        z += w;
        for (i, &s) in states.iter().enumerate() {
            accum[i][s] += w;
        }
        if !next_state(&mut states, m.domain) {
            break;
        }
    }

    Ok(nodes
        .iter()
        .zip(accum)
        .map(|(&v, dist)| (v, dist.into_iter().map(|w| w / z).collect()))
        .collect())
}

// A log-space table over the nodes of one bag, row-major with the first
// node slowest.
#[derive(Debug, Clone)]
struct BagTable {
    nodes: Vec<NodeId>,
    domain: usize,
    log: Vec<f64>,
}

impl BagTable {
    fn zeros(nodes: Vec<NodeId>, domain: usize) -> Self {
        let len = domain.pow(nodes.len() as u32);
        BagTable { nodes, domain, log: vec![0.0; len] }
    }

    fn decode(&self, mut idx: usize) -> Vec<usize> {
        let mut states = vec![0usize; self.nodes.len()];
        for slot in states.iter_mut().rev() {
            *slot = idx % self.domain;
            idx /= self.domain;
        }
        states
    }

    // Adds a smaller table (its nodes ⊆ ours) into this one, broadcasting
    // over the remaining nodes.
    fn absorb(&mut self, other: &BagTable) {
        let pos: Vec<usize> = other
            .nodes
            .iter()
            .map(|v| self.nodes.binary_search(v).expect("absorbed nodes are bag members"))
            .collect();
        for idx in 0..self.log.len() {
            let states = self.decode(idx);
            let sub = pos.iter().fold(0, |acc, &p| acc * self.domain + states[p]);
            self.log[idx] += other.log[sub];
        }
    }

    // Log-sum-exp marginalization onto a subset of this table's nodes.
    fn marginalize_onto(&self, keep: &[NodeId]) -> BagTable {
        let pos: Vec<usize> = keep
            .iter()
            .map(|v| self.nodes.binary_search(v).expect("kept nodes are bag members"))
            .collect();
        let mut maxes = vec![f64::NEG_INFINITY; self.domain.pow(keep.len() as u32)];
        let mut sums = vec![0.0f64; maxes.len()];
        let project = |states: &[usize]| pos.iter().fold(0, |acc, &p| acc * self.domain + states[p]);
        for idx in 0..self.log.len() {
            let states = self.decode(idx);
            let tgt = project(&states);
            maxes[tgt] = maxes[tgt].max(self.log[idx]);
        }
        for idx in 0..self.log.len() {
            let states = self.decode(idx);
            let tgt = project(&states);
            if maxes[tgt].is_finite() {
                sums[tgt] += (self.log[idx] - maxes[tgt]).exp();
            }
        }
        let log = maxes
            .into_iter()
            .zip(sums)
            .map(|(m, s)| if m.is_finite() { m + s.ln() } else { m })
            .collect();
        BagTable { nodes: keep.to_vec(), domain: self.domain, log }
    }
}

/// Exact per-node marginals via two-pass sum-product calibration on the
/// junction tree of the model's graph: clique potentials are assembled with
/// [`factorize`], messages flow leaves-to-root then root-to-leaves, and each
/// node reads its marginal out of the lowest-id bag containing it. Always
/// agrees with [`brute_force_marginals`].
pub fn junction_tree_marginals(m: &DiscretePgm) -> Result<BTreeMap<NodeId, Vec<f64>>, PgmError> {
    let td = junction_tree(m.source_graph());
    let fac = factorize(&m.f, &td)?;
    let num_bags = td.num_bags();
    for b in 0..num_bags {
        checked_state_space(m.domain, td.bag(b).len(), "bag table")?;
    }

    // ψ_b: one table per bag, absorbing the clique terms the scan assigned it.
    let mut psi: Vec<BagTable> = (0..num_bags)
        .map(|b| BagTable::zeros(td.bag(b).as_slice().to_vec(), m.domain))
        .collect();
    for b in 0..num_bags {
        for &c in fac.cliques_of(b) {
            let clique = &m.f.cliques[c];
            let table = match &m.f.clique_fns[c] {
                CliqueFn::Discrete(t) => t,
                CliqueFn::Continuous(_) => unreachable!("discrete models hold tables only"),
            };
            let term = BagTable {
                nodes: clique.as_slice().to_vec(),
                domain: m.domain,
                log: table.entries.clone(),
            };
            psi[b].absorb(&term);
        }
    }

    // BFS parents per component give the two sweep orders.
    let order = root_order(&td);
    let mut parent: Vec<Option<BagId>> = vec![None; num_bags];
    let mut seen = vec![false; num_bags];
    for &b in &order {
        seen[b] = true;
        for nb in td.bag_neighbors(b) {
            if !seen[nb] {
                seen[nb] = true;
                parent[nb] = Some(b);
            }
        }
    }

    // Directed messages, keyed (from, to).
    let mut messages: BTreeMap<(BagId, BagId), BagTable> = BTreeMap::new();
    let send = |from: BagId,
                to: BagId,
                psi: &[BagTable],
                messages: &BTreeMap<(BagId, BagId), BagTable>|
     -> BagTable {
        let mut work = psi[from].clone();
        for nb in td.bag_neighbors(from) {
            if nb != to {
                work.absorb(&messages[&(nb, from)]);
            }
        }
        let sep: Vec<NodeId> = td.bag(from).intersection(td.bag(to)).iter().collect();
        work.marginalize_onto(&sep)
    };
    // Upward: children before parents (reverse BFS order).
    for &b in order.iter().rev() {
        if let Some(p) = parent[b] {
            let msg = send(b, p, &psi, &messages);
            messages.insert((b, p), msg);
        }
    }
    // Downward: parents before children (BFS order).
    for &b in &order {
        for nb in td.bag_neighbors(b) {
            if parent[nb] == Some(b) {
                let msg = send(b, nb, &psi, &messages);
                messages.insert((b, nb), msg);
            }
        }
    }

    // Beliefs, then per-node readout from the lowest-id containing bag.
    let mut beliefs = psi;
    for b in 0..num_bags {
        for nb in td.bag_neighbors(b) {
            let incoming = messages[&(nb, b)].clone();
            beliefs[b].absorb(&incoming);
        }
    }
    let mut out = BTreeMap::new();
    for &v in m.source_graph().nodes() {
        let bag = (0..num_bags)
            .find(|&b| td.bag(b).contains(v))
            .expect("decompositions cover every node");
        let one = beliefs[bag].marginalize_onto(&[v]);
        let max = one.log.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = one.log.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = weights.iter().sum();
        out.insert(v, weights.into_iter().map(|w| w / z).collect());
    }
    Ok(out)
}

/// Exhaustive maximum-a-posteriori labeling: the joint assignment maximizing
/// `f`, scanning labelings in lexicographic order so ties resolve to the
/// lexicographically smallest one.
pub fn map_labels(m: &DiscretePgm) -> Result<BTreeMap<NodeId, usize>, PgmError> {
    let nodes = m.f.source_graph.nodes();
    let n = nodes.len();
    checked_state_space(m.domain, n, "labeling enumeration")?;
    let positions = m.clique_positions();

    let mut states = vec![0usize; n];
    let mut best = states.clone();
    let mut best_score = m.eval_positional(&states, &positions);
    while next_state(&mut states, m.domain) {
        let score = m.eval_positional(&states, &positions);
        if score > best_score {
            best_score = score;
            best.copy_from_slice(&states);
        }
    }
    Ok(nodes.iter().copied().zip(best).collect())
}

// ---------------------------------------------------------------------------
// Moralization
// ---------------------------------------------------------------------------

/// Converts a directed model structure (child → parent lists) into its
/// undirected moral graph: the skeleton plus an edge between every pair of
/// co-parents. Rejects cyclic input.
pub fn moralize(parents: &BTreeMap<NodeId, Vec<NodeId>>) -> Result<Graph, PgmError> {
    let mut nodes: BTreeSet<NodeId> = parents.keys().copied().collect();
    for ps in parents.values() {
        nodes.extend(ps.iter().copied());
    }

    // Kahn's algorithm in the parent → child orientation detects cycles;
    // the children of v are the keys listing v among their parents.
    let mut indegree: BTreeMap<NodeId, usize> = nodes.iter().map(|&v| (v, 0)).collect();
    let mut children: BTreeMap<NodeId, Vec<NodeId>> = nodes.iter().map(|&v| (v, Vec::new())).collect();
    for (&child, ps) in parents {
        for &p in ps {
            children.get_mut(&p).expect("parent is a node").push(child);
            *indegree.get_mut(&child).expect("child is a node") += 1;
        }
    }
    let mut queue: VecDeque<NodeId> =
        indegree.iter().filter(|(_, &d)| d == 0).map(|(&v, _)| v).collect();
    let mut visited = 0usize;
    while let Some(v) = queue.pop_front() {
        visited += 1;
        for &c in &children[&v] {
            let d = indegree.get_mut(&c).expect("child is a node");
            *d -= 1;
            if *d == 0 {
                queue.push_back(c);
            }
        }
    }
    if visited != nodes.len() {
        return Err(PgmError::CyclicInput);
    }

    let mut edges: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
    let mut add = |a: NodeId, b: NodeId| {
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    };
    for (&child, ps) in parents {
        for &p in ps {
            add(child, p);
        }
        // Marry all co-parents pairwise.
        for (i, &p) in ps.iter().enumerate() {
            for &q in &ps[i + 1..] {
                add(p, q);
            }
        }
    }
    Ok(Graph::new(nodes.into_iter().collect(), edges.into_iter().collect())?)
}

// ---------------------------------------------------------------------------
// Random generators
// ---------------------------------------------------------------------------

/// Which kind of clique terms to sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleMode {
    Discrete { domain: usize },
    Continuous { lipschitz: f64 },
}

/// Samples a random compatible function on `g`, deterministically in `seed`:
/// discrete tables get i.i.d. uniform `[0,1)` log-entries; continuous terms
/// average per-coordinate random-walk curves whose increments respect the
/// requested Lipschitz constant and whose values stay in `[0,1]`.
pub fn sample_random_compatible(g: &Graph, mode: SampleMode, seed: u64) -> CompatibleFunction {
    match mode {
        SampleMode::Discrete { domain } => assert!(domain >= 1, "domain size must be positive"),
        SampleMode::Continuous { lipschitz } => {
            assert!(lipschitz >= 0.0 && lipschitz.is_finite(), "Lipschitz constant must be finite and non-negative")
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let cliques = g.maximal_cliques().expect("generator inputs stay under the clique-size guard");
    let fns = cliques
        .iter()
        .map(|c| match mode {
            SampleMode::Discrete { domain } => {
                let len = domain.pow(c.len() as u32);
                let entries = (0..len).map(|_| rng.random::<f64>()).collect();
                CliqueFn::Discrete(DiscreteTable { domain, entries })
            }
            SampleMode::Continuous { lipschitz } => {
                let step = lipschitz / (PWL_KNOTS - 1) as f64;
                let knots = (0..c.len())
                    .map(|_| {
                        let mut y: f64 = rng.random();
                        let mut curve = Vec::with_capacity(PWL_KNOTS);
                        curve.push(y);
                        for _ in 1..PWL_KNOTS {
                            let delta = rng.random_range(-step..=step);
                            y = (y + delta).clamp(0.0, 1.0);
                            curve.push(y);
                        }
                        curve
                    })
                    .collect();
                CliqueFn::Continuous(PiecewiseLinear { lipschitz, knots })
            }
        })
        .collect();
    CompatibleFunction::new(g.clone(), fns).expect("sampled terms match the clique list by construction")
}

// ---------------------------------------------------------------------------
// On-disk format (discrete models)
// ---------------------------------------------------------------------------

// Table map keyed by clique index; serialized with numerically ordered keys
// (a plain string map would order "10" before "2").
#[derive(Debug, Clone, PartialEq)]
struct TablesDoc(BTreeMap<usize, Vec<f64>>);

impl Serialize for TablesDoc {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(&k.to_string(), v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for TablesDoc {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw: BTreeMap<String, Vec<f64>> = Deserialize::deserialize(deserializer)?;
        let mut out = BTreeMap::new();
        for (k, v) in raw {
            let idx: usize = k
                .parse()
                .map_err(|_| D::Error::custom(format!("table key {k:?} is not a clique index")))?;
            if out.insert(idx, v).is_some() {
                return Err(D::Error::custom(format!("duplicate table for clique {idx}")));
            }
        }
        Ok(TablesDoc(out))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PgmDoc {
    cliques: Vec<Vec<NodeId>>,
    tables: TablesDoc,
    domain: usize,
}

impl DiscretePgm {
    /// Canonical JSON encoding: the maximal cliques in canonical order, one
    /// flat row-major table per clique index, and the shared domain size.
    pub fn to_json_string(&self) -> String {
        let tables = TablesDoc(
            self.f
                .clique_fns
                .iter()
                .enumerate()
                .map(|(i, f)| match f {
                    CliqueFn::Discrete(t) => (i, t.entries.clone()),
                    CliqueFn::Continuous(_) => unreachable!("discrete models hold tables only"),
                })
                .collect(),
        );
        let doc = PgmDoc {
            cliques: self.f.cliques.iter().map(|c| c.as_slice().to_vec()).collect(),
            tables,
            domain: self.domain,
        };
        serde_json::to_string(&doc).expect("model serialization cannot fail")
    }

    /// Decodes a model document. The graph is reconstructed as the union of
    /// the listed cliques, which must be exactly its maximal cliques; each
    /// clique index must carry a table of `domain^|C|` finite entries.
    pub fn from_json_str(text: &str) -> Result<Self, PgmError> {
        let doc: PgmDoc = serde_json::from_str(text).map_err(|e| PgmError::Decode(e.to_string()))?;
        if doc.domain == 0 {
            return Err(PgmError::EmptyDomain);
        }
        let file_cliques: Vec<NodeSet> =
            doc.cliques.iter().map(|c| NodeSet::new(c.clone())).collect();
        for (i, (raw, canon)) in doc.cliques.iter().zip(&file_cliques).enumerate() {
            if raw.len() != canon.len() || canon.is_empty() {
                return Err(PgmError::Decode(format!("clique #{i} is empty or repeats a node")));
            }
        }
        let mut nodes: BTreeSet<NodeId> = BTreeSet::new();
        let mut edges: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
        for c in &file_cliques {
            let members = c.as_slice();
            nodes.extend(members.iter().copied());
            for (i, &a) in members.iter().enumerate() {
                for &b in &members[i + 1..] {
                    edges.insert((a, b));
                }
            }
        }
        let graph = Graph::new(nodes.into_iter().collect(), edges.into_iter().collect())?;
        let canonical = graph.maximal_cliques()?;
        let mut as_sets: Vec<&NodeSet> = file_cliques.iter().collect();
        as_sets.sort();
        as_sets.dedup();
        if as_sets.len() != file_cliques.len()
            || canonical.len() != file_cliques.len()
            || canonical.iter().any(|c| !file_cliques.contains(c))
        {
            return Err(PgmError::CliquesNotMaximal);
        }

        // Reorder the file's tables onto the canonical clique order.
        let mut fns = Vec::with_capacity(canonical.len());
        for c in &canonical {
            let file_idx = file_cliques.iter().position(|fc| fc == c).expect("set equality");
            let entries = doc
                .tables
                .0
                .get(&file_idx)
                .ok_or_else(|| PgmError::Decode(format!("no table for clique {file_idx}")))?
                .clone();
            fns.push(CliqueFn::Discrete(DiscreteTable { domain: doc.domain, entries }));
        }
        if doc.tables.0.keys().any(|&k| k >= file_cliques.len()) {
            return Err(PgmError::Decode("table key exceeds clique count".into()));
        }
        DiscretePgm::new(CompatibleFunction::new(graph, fns)?)
    }
}
