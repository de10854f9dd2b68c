//! Synthetic dataset generators.
//!
//! Three families, all deterministic given a seed:
//!
//! * `pgm_labels` — random bounded-treewidth graphs whose labels are the
//!   exact maximum-a-posteriori assignment of a random discrete model that
//!   decomposes over the graph's cliques, so the ground truth is compatible
//!   with the graph by construction. Node features observe the evidence the
//!   model was conditioned on.
//! * `scene_like` — star graphs with one hub ("room") node and a handful of
//!   satellite ("object") nodes; object labels depend on both the object's
//!   own noisy features and the hub's latent kind, so context has to travel
//!   over edges for full accuracy.
//! * `regression_theorem2` — one fixed graph, many resamplings of
//!   continuous per-node features in `[0,1]`, each item's target being the
//!   value of a fixed random clique-decomposable Lipschitz function.

use super::{mix_seed, Dataset, PipelineError, SplitSpec, SALT_SUBSAMPLE};
use crate::graph::{Graph, NodeId};
use crate::pgm::{
    map_labels, sample_random_compatible, CliqueFn, CompatibleFunction, DiscretePgm,
    DiscreteTable, SampleMode, MAX_JOINT_STATES,
};
use crate::subsample::sample_bounded_treewidth;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Parameters for the `pgm_labels` generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PgmLabelsParams {
    pub num_graphs: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub edge_prob: f64,
    /// Class count; also the state domain of the generating model.
    pub num_labels: usize,
    /// Graphs are edge-subsampled to certified treewidth at most this.
    pub treewidth_bound: usize,
    /// When set, the generating model has no interaction terms, making every
    /// label a deterministic per-node function of that node's own feature.
    pub unary_only: bool,
    /// Strength of the pairwise same-label bonus (ignored when unary-only).
    pub coupling: f64,
    pub split: SplitSpec,
}

impl Default for PgmLabelsParams {
    fn default() -> Self {
        PgmLabelsParams {
            num_graphs: 120,
            min_nodes: 6,
            max_nodes: 10,
            edge_prob: 0.35,
            num_labels: 3,
            treewidth_bound: 2,
            unary_only: false,
            coupling: 1.5,
            split: SplitSpec::default(),
        }
    }
}

/// Parameters for the `scene_like` generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneLikeParams {
    pub num_graphs: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Half-width of the uniform noise added to every feature coordinate.
    pub feature_noise: f64,
    pub split: SplitSpec,
}

impl Default for SceneLikeParams {
    fn default() -> Self {
        SceneLikeParams {
            num_graphs: 240,
            min_objects: 3,
            max_objects: 5,
            feature_noise: 0.05,
            split: SplitSpec::default(),
        }
    }
}

/// Parameters for the `regression_theorem2` generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionParams {
    /// Number of feature resamplings (dataset items).
    pub num_samples: usize,
    pub num_nodes: usize,
    pub edge_prob: f64,
    /// Lipschitz constant of the target function's clique terms.
    pub lipschitz: f64,
    pub split: SplitSpec,
}

impl Default for RegressionParams {
    fn default() -> Self {
        RegressionParams {
            num_samples: 300,
            num_nodes: 5,
            edge_prob: 0.5,
            lipschitz: 1.0,
            split: SplitSpec::default(),
        }
    }
}

/// Which generator to run, with its parameters. Serialized externally
/// tagged, e.g. `{"scene_like": {}}` (all parameters default).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerateSpec {
    PgmLabels(PgmLabelsParams),
    SceneLike(SceneLikeParams),
    RegressionTheorem2(RegressionParams),
}

impl GenerateSpec {
    /// Default parameters for a kind named on the command line.
    pub fn from_kind_str(kind: &str) -> Option<GenerateSpec> {
        match kind {
            "pgm_labels" => Some(GenerateSpec::PgmLabels(PgmLabelsParams::default())),
            "scene_like" => Some(GenerateSpec::SceneLike(SceneLikeParams::default())),
            "regression_theorem2" => {
                Some(GenerateSpec::RegressionTheorem2(RegressionParams::default()))
            }
            _ => None,
        }
    }

    pub fn kind_str(&self) -> &'static str {
        match self {
            GenerateSpec::PgmLabels(_) => "pgm_labels",
            GenerateSpec::SceneLike(_) => "scene_like",
            GenerateSpec::RegressionTheorem2(_) => "regression_theorem2",
        }
    }

    fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::BadParams(msg));
        match self {
            GenerateSpec::PgmLabels(p) => {
                if p.num_graphs == 0 {
                    return bad("num_graphs must be positive".into());
                }
                if p.min_nodes == 0 || p.min_nodes > p.max_nodes {
                    return bad(format!(
                        "node range [{}, {}] is empty or zero",
                        p.min_nodes, p.max_nodes
                    ));
                }
                if !(0.0..=1.0).contains(&p.edge_prob) {
                    return bad(format!("edge_prob {} outside [0,1]", p.edge_prob));
                }
                if p.num_labels < 2 {
                    return bad("num_labels must be at least 2".into());
                }
                if p.treewidth_bound == 0 {
                    return bad("treewidth_bound must be positive".into());
                }
                // Labeling uses exhaustive enumeration; keep it enumerable.
                let states = (p.num_labels as f64).powi(p.max_nodes as i32);
                if states > MAX_JOINT_STATES as f64 {
                    return bad(format!(
                        "{} labels on up to {} nodes exceeds the {} joint states the exact labeler can enumerate",
                        p.num_labels, p.max_nodes, MAX_JOINT_STATES
                    ));
                }
                Ok(())
            }
            GenerateSpec::SceneLike(p) => {
                if p.num_graphs == 0 {
                    return bad("num_graphs must be positive".into());
                }
                if p.min_objects == 0 || p.min_objects > p.max_objects {
                    return bad(format!(
                        "object range [{}, {}] is empty or zero",
                        p.min_objects, p.max_objects
                    ));
                }
                if !(0.0..0.5).contains(&p.feature_noise) {
                    return bad(format!("feature_noise {} outside [0, 0.5)", p.feature_noise));
                }
                Ok(())
            }
            GenerateSpec::RegressionTheorem2(p) => {
                if p.num_samples == 0 || p.num_nodes == 0 {
                    return bad("num_samples and num_nodes must be positive".into());
                }
                if p.num_nodes > 10 {
                    return bad(format!(
                        "regression graphs are capped at 10 nodes, got {}",
                        p.num_nodes
                    ));
                }
                if !(0.0..=1.0).contains(&p.edge_prob) {
                    return bad(format!("edge_prob {} outside [0,1]", p.edge_prob));
                }
                if !(p.lipschitz > 0.0) {
                    return bad(format!("lipschitz {} must be positive", p.lipschitz));
                }
                Ok(())
            }
        }
    }
}

/// Number of classes the `scene_like` task uses (3 room kinds + 4 object
/// labels) and its feature dimension.
pub const SCENE_NUM_CLASSES: usize = 7;
pub const SCENE_FEATURE_DIM: usize = 4;

/// Builds a synthetic dataset. Identical `(spec, seed)` always produce an
/// identical dataset.
pub fn generate_synthetic(spec: &GenerateSpec, seed: u64) -> Result<Dataset, PipelineError> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (graphs, split) = match spec {
        GenerateSpec::PgmLabels(p) => (gen_pgm_labels(p, seed, &mut rng)?, p.split.clone()),
        GenerateSpec::SceneLike(p) => (gen_scene_like(p, &mut rng)?, p.split.clone()),
        GenerateSpec::RegressionTheorem2(p) => (gen_regression(p, &mut rng)?, p.split.clone()),
    };
    Ok(Dataset { graphs, split, seed })
}

/// Erdős–Rényi edges over `0..n`, drawn in ascending pair order.
fn random_edges(n: usize, p: f64, rng: &mut ChaCha20Rng) -> Vec<(NodeId, NodeId)> {
    let mut edges = Vec::new();
    for u in 0..n as NodeId {
        for v in (u + 1)..n as NodeId {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    edges
}

fn gen_pgm_labels(
    p: &PgmLabelsParams,
    seed: u64,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<Graph>, PipelineError> {
    let d = p.num_labels;
    // One evidence-to-label affinity matrix shared by the whole dataset:
    // row o scores each label for a node whose evidence is o. Continuous
    // draws make per-node argmaxes unique almost surely.
    let affinity: Vec<Vec<f64>> =
        (0..d).map(|_| (0..d).map(|_| rng.random::<f64>() * 2.0).collect()).collect();

    let mut graphs = Vec::with_capacity(p.num_graphs);
    for idx in 0..p.num_graphs {
        let n = rng.random_range(p.min_nodes..=p.max_nodes);
        let nodes: Vec<NodeId> = (0..n as NodeId).collect();
        let g = Graph::new(nodes.clone(), random_edges(n, p.edge_prob, rng))?;
        let sub_seed = mix_seed(seed, SALT_SUBSAMPLE.wrapping_add(idx as u64));
        let g = sample_bounded_treewidth(&g, p.treewidth_bound, sub_seed)?.subgraph;

        // Per-node evidence, observed by the models as one-hot features.
        let evidence: BTreeMap<NodeId, usize> =
            nodes.iter().map(|&v| (v, rng.random_range(0..d))).collect();

        let cliques = g.maximal_cliques()?;
        // Each node (and edge) may sit in several maximal cliques; dividing
        // its contribution by that multiplicity keeps the summed function
        // equal to one unary term per node plus one interaction per edge.
        let mut node_count: BTreeMap<NodeId, usize> = BTreeMap::new();
        let mut pair_count: BTreeMap<(NodeId, NodeId), usize> = BTreeMap::new();
        for c in &cliques {
            let members = c.as_slice();
            for &v in members {
                *node_count.entry(v).or_insert(0) += 1;
            }
            for (i, &u) in members.iter().enumerate() {
                for &v in &members[i + 1..] {
                    *pair_count.entry((u, v)).or_insert(0) += 1;
                }
            }
        }

        let mut tables = Vec::with_capacity(cliques.len());
        for c in &cliques {
            let members = c.as_slice();
            let k = members.len();
            let size = d.pow(k as u32);
            let mut entries = Vec::with_capacity(size);
            let mut states = vec![0usize; k];
            for s in 0..size {
                // Row-major decode: first member varies slowest.
                let mut rem = s;
                for i in (0..k).rev() {
                    states[i] = rem % d;
                    rem /= d;
                }
                let mut e = 0.0;
                for (i, &v) in members.iter().enumerate() {
                    e += affinity[evidence[&v]][states[i]] / node_count[&v] as f64;
                }
                if !p.unary_only {
                    for (i, &u) in members.iter().enumerate() {
                        for (j, &v) in members.iter().enumerate().skip(i + 1) {
                            if states[i] == states[j] {
                                e += p.coupling / pair_count[&(u, v)] as f64;
                            }
                        }
                    }
                }
                entries.push(e);
            }
            tables.push(CliqueFn::Discrete(DiscreteTable { domain: d, entries }));
        }
        let model = DiscretePgm::new(CompatibleFunction::new(g.clone(), tables)?)?;
        let labels: BTreeMap<NodeId, u32> = map_labels(&model)?
            .into_iter()
            .map(|(v, l)| (v, l as u32))
            .collect();

        let features: BTreeMap<NodeId, Vec<f64>> = nodes
            .iter()
            .map(|&v| {
                let mut one_hot = vec![0.0; d];
                one_hot[evidence[&v]] = 1.0;
                (v, one_hot)
            })
            .collect();
        graphs.push(g.with_features(features)?.with_labels(labels)?);
    }
    Ok(graphs)
}

fn gen_scene_like(p: &SceneLikeParams, rng: &mut ChaCha20Rng) -> Result<Vec<Graph>, PipelineError> {
    let mut graphs = Vec::with_capacity(p.num_graphs);
    for _ in 0..p.num_graphs {
        let m = rng.random_range(p.min_objects..=p.max_objects);
        let nodes: Vec<NodeId> = (0..=m as NodeId).collect();
        let edges: Vec<(NodeId, NodeId)> = (1..=m as NodeId).map(|v| (0, v)).collect();

        let room_kind = rng.random_range(0..3u32);
        let object_kind: Vec<u32> = (0..m).map(|_| rng.random_range(0..2u32)).collect();

        let noise = |rng: &mut ChaCha20Rng| (rng.random::<f64>() - 0.5) * 2.0 * p.feature_noise;
        let mut features = BTreeMap::new();
        let mut labels = BTreeMap::new();
        let mut types = BTreeMap::new();
        // Hub node: its own kind is visible in its features and is its label.
        let mut f0 = vec![0.0; SCENE_FEATURE_DIM];
        for (k, slot) in f0.iter_mut().enumerate().take(3) {
            *slot = if k as u32 == room_kind { 1.0 } else { 0.0 } + noise(rng);
        }
        f0[3] = 1.0 + noise(rng);
        features.insert(0, f0);
        labels.insert(0, room_kind);
        types.insert(0, 0u32);
        // Satellites: they see their own kind but not the room's, yet their
        // label depends on both — context must flow over the edge.
        for (i, &c) in object_kind.iter().enumerate() {
            let v = (i + 1) as NodeId;
            let f = vec![c as f64 + noise(rng), noise(rng), noise(rng), noise(rng)];
            features.insert(v, f);
            labels.insert(v, 3 + c + 2 * u32::from(room_kind == 2));
            types.insert(v, 1u32);
        }

        graphs.push(
            Graph::new(nodes, edges)?
                .with_features(features)?
                .with_labels(labels)?
                .with_node_types(types)?,
        );
    }
    Ok(graphs)
}

fn gen_regression(p: &RegressionParams, rng: &mut ChaCha20Rng) -> Result<Vec<Graph>, PipelineError> {
    let nodes: Vec<NodeId> = (0..p.num_nodes as NodeId).collect();
    let base = Graph::new(nodes.clone(), random_edges(p.num_nodes, p.edge_prob, rng))?;
    let f_seed = rng.random::<u64>();
    let target_fn = sample_random_compatible(
        &base,
        SampleMode::Continuous { lipschitz: p.lipschitz },
        f_seed,
    );

    let mut graphs = Vec::with_capacity(p.num_samples);
    for _ in 0..p.num_samples {
        let xs: BTreeMap<NodeId, f64> = nodes.iter().map(|&v| (v, rng.random::<f64>())).collect();
        let y = target_fn.eval_reals(&xs)?;
        let features: BTreeMap<NodeId, Vec<f64>> =
            xs.iter().map(|(&v, &x)| (v, vec![x])).collect();
        let targets: BTreeMap<NodeId, f64> = nodes.iter().map(|&v| (v, y)).collect();
        graphs.push(base.clone().with_features(features)?.with_targets(targets)?);
    }
    Ok(graphs)
}
