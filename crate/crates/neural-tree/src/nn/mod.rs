//! The neural engine: message-passing forward passes over H-trees and plain
//! graphs, exact reverse-mode gradients, losses, and model (de)serialization.
//!
//! Two aggregators are provided, with weights shared across nodes within an
//! iteration:
//!
//! - `gcn_mean`: rectified linear map of the mean over the closed
//!   neighborhood;
//! - `shallow_relu`: rectified affine map of the self vector and the summed
//!   neighbor vectors — the trainable, weight-shared form of the shallow
//!   aggregation unit in [`kernels::shallow_agg`].
//!
//! A separate scripted mode drives per-node shallow units directly; it
//! exists for the exact hand-set message-passing programs (see
//! [`forward::sum_broadcast_program`]), not for training.
//!
//! Everything is double precision and deterministic: same parameters, same
//! inputs, same seed — bit-identical outputs, losses, and gradients.

pub mod backward;
pub mod forward;
pub mod kernels;

pub use backward::{batch_loss_and_grads, TrainItem};
pub use forward::{
    baseline_gnn_forward, nt_forward, nt_hidden_states, run_scripted, sum_broadcast_program,
    Network, SumBroadcastProgram,
};
pub use kernels::{shallow_agg, Mat, ShallowUnit};

use crate::graph::NodeId;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("model needs at least one message-passing iteration")]
    ZeroIterations,
    #[error("invalid model configuration: {0}")]
    BadConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no feature vector for node {0}")]
    MissingFeature(NodeId),
    #[error("feature vector of node {node} has length {got}, model expects {want}")]
    FeatureDim { node: NodeId, got: usize, want: usize },
    #[error("no head for node type {0}")]
    MissingHead(u32),
    #[error("label {got} of node {node} is outside the {classes}-class range")]
    LabelOutOfRange { node: NodeId, got: usize, classes: usize },
    #[error("no model output for target node {0}")]
    MissingOutput(NodeId),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("malformed checkpoint: {0}")]
    Decode(String),
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Which aggregation rule every iteration applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    GcnMean,
    ShallowRelu,
}

/// Output head: per-node class distribution or a scalar regression value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    Classification { num_classes: usize },
    Regression,
}

impl HeadKind {
    pub fn output_dim(&self) -> usize {
        match self {
            HeadKind::Classification { num_classes } => *num_classes,
            HeadKind::Regression => 1,
        }
    }
}

/// Static shape and behavior of a model; the trainable numbers live in
/// [`ModelParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub aggregator: AggregatorKind,
    pub head: HeadKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub iterations: usize,
    /// Drop probability applied after each iteration's activation during
    /// training only; 0 disables.
    pub dropout: f64,
    /// When set, each iteration learns two extra scalars that scale messages
    /// on root-to-root links and parent/child links separately (H-tree
    /// forward passes only; plain graphs treat all edges alike).
    pub edge_scalars: bool,
    /// Node types that get their own output head, ascending. Nodes of an
    /// unlisted type are an error at forward time; untyped inputs use type 0.
    pub head_types: Vec<u32>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.iterations == 0 {
            return Err(NnError::ZeroIterations);
        }
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(NnError::BadConfig("feature and hidden dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NnError::BadConfig(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if let HeadKind::Classification { num_classes } = self.head {
            if num_classes < 2 {
                return Err(NnError::BadConfig("classification needs at least 2 classes".into()));
            }
        }
        if self.head_types.is_empty() {
            return Err(NnError::BadConfig("at least one head type is required".into()));
        }
        if self.head_types.windows(2).any(|w| w[0] >= w[1]) {
            return Err(NnError::BadConfig("head types must be strictly ascending".into()));
        }
        Ok(())
    }

    /// Input dimension fed into iteration `t` (0-based).
    fn iter_input_dim(&self, t: usize) -> usize {
        if t == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Weights of one message-passing iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IterParams {
    GcnMean { weight: Mat, bias: Vec<f64> },
    ShallowRelu { w_self: Mat, w_nbr: Mat, bias: Vec<f64> },
}

/// Per-iteration trainable scales for the two link flavors of an H-tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeScalars {
    pub root: f64,
    pub child: f64,
}

/// One output head: a linear layer from the hidden dimension to the head's
/// output dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

/// All trainable numbers of one model, together with its configuration.
/// Doubles as the gradient container: gradients of a parameter set have
/// exactly its shape (see [`ModelParams::zeros_like`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub iters: Vec<IterParams>,
    pub edge_scalars: Option<Vec<EdgeScalars>>,
    /// `(node_type, head)` pairs, ascending by type.
    pub heads: Vec<(u32, HeadParams)>,
}

impl ModelParams {
    /// Fresh parameters: Glorot-uniform weight matrices, zero biases, unit
    /// edge scalars. Deterministic in `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut glorot = |rows: usize, cols: usize| -> Mat {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
            Mat { rows, cols, data }
        };
        let iters = (0..config.iterations)
            .map(|t| {
                let (rows, cols) = (config.hidden_dim, config.iter_input_dim(t));
                match config.aggregator {
                    AggregatorKind::GcnMean => {
                        IterParams::GcnMean { weight: glorot(rows, cols), bias: vec![0.0; rows] }
                    }
                    AggregatorKind::ShallowRelu => IterParams::ShallowRelu {
                        w_self: glorot(rows, cols),
                        w_nbr: glorot(rows, cols),
                        bias: vec![0.0; rows],
                    },
                }
            })
            .collect();
        let edge_scalars = config
            .edge_scalars
            .then(|| (0..config.iterations).map(|_| EdgeScalars { root: 1.0, child: 1.0 }).collect());
        let out_dim = config.head.output_dim();
        let heads = config
            .head_types
            .clone()
            .into_iter()
            .map(|t| {
                (t, HeadParams { weight: glorot(out_dim, config.hidden_dim), bias: vec![0.0; out_dim] })
            })
            .collect();
        Ok(ModelParams { config, iters, edge_scalars, heads })
    }

    /// All-zero parameters of the same shape (softmax heads then output the
    /// uniform distribution everywhere).
    pub fn zeros(config: ModelConfig) -> Result<Self, NnError> {
        let mut p = Self::init(config, 0)?;
        for v in p.values_mut() {
            *v = 0.0;
        }
        Ok(p)
    }

    /// A zero-filled copy — the starting gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        for v in g.values_mut() {
            *v = 0.0;
        }
        g
    }

    pub fn head(&self, node_type: u32) -> Result<&HeadParams, NnError> {
        self.heads
            .binary_search_by_key(&node_type, |(t, _)| *t)
            .map(|i| &self.heads[i].1)
            .map_err(|_| NnError::MissingHead(node_type))
    }

    pub fn num_params(&self) -> usize {
        let mut probe = self.clone();
        probe.values_mut().count()
    }

    /// Every trainable scalar in a fixed canonical order: iterations first
    /// (matrices row-major, then bias), then edge scalars (root before
    /// child), then heads ascending by node type. `flatten`, `unflatten`,
    /// and gradient containers all share this order.
    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        let iter_vals = self.iters.iter_mut().flat_map(|it| match it {
            IterParams::GcnMean { weight, bias } => {
                weight.data.iter_mut().chain(bias.iter_mut()).collect::<Vec<_>>()
            }
            IterParams::ShallowRelu { w_self, w_nbr, bias } => w_self
                .data
                .iter_mut()
                .chain(w_nbr.data.iter_mut())
                .chain(bias.iter_mut())
                .collect(),
        });
        let scalar_vals = self
            .edge_scalars
            .iter_mut()
            .flatten()
            .flat_map(|s| [&mut s.root, &mut s.child]);
        let head_vals = self
            .heads
            .iter_mut()
            .flat_map(|(_, h)| h.weight.data.iter_mut().chain(h.bias.iter_mut()));
        iter_vals.chain(scalar_vals).chain(head_vals)
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut probe = self.clone();
        probe.values_mut().map(|v| *v).collect()
    }

    pub fn unflatten_from(&mut self, flat: &[f64]) -> Result<(), NnError> {
        let mut it = flat.iter();
        for v in self.values_mut() {
            *v = *it
                .next()
                .ok_or_else(|| NnError::ShapeMismatch("flat vector too short".into()))?;
        }
        if it.next().is_some() {
            return Err(NnError::ShapeMismatch("flat vector too long".into()));
        }
        Ok(())
    }

    /// Sum of squares of every parameter — the `‖θ‖²` regularizer term.
    pub fn squared_norm(&self) -> f64 {
        self.flatten().iter().map(|v| v * v).sum()
    }

    /// Structural consistency check used after deserialization.
    pub fn validate_shapes(&self) -> Result<(), NnError> {
        self.config.validate()?;
        let cfg = &self.config;
        if self.iters.len() != cfg.iterations {
            return Err(NnError::ShapeMismatch(format!(
                "{} iteration blocks for {} iterations",
                self.iters.len(),
                cfg.iterations
            )));
        }
        let check_mat = |m: &Mat, rows: usize, cols: usize, what: &str| -> Result<(), NnError> {
            if !m.shape_ok() || m.rows != rows || m.cols != cols {
                return Err(NnError::ShapeMismatch(format!(
                    "{what}: {}×{} (len {}), expected {rows}×{cols}",
                    m.rows,
                    m.cols,
                    m.data.len()
                )));
            }
            if m.data.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite(what.to_string()));
            }
            Ok(())
        };
        for (t, it) in self.iters.iter().enumerate() {
            let (rows, cols) = (cfg.hidden_dim, cfg.iter_input_dim(t));
            let bias = match it {
                IterParams::GcnMean { weight, bias } => {
                    check_mat(weight, rows, cols, &format!("iteration {t} weight"))?;
                    if cfg.aggregator != AggregatorKind::GcnMean {
                        return Err(NnError::ShapeMismatch(format!(
                            "iteration {t} block disagrees with the configured aggregator"
                        )));
                    }
                    bias
                }
                IterParams::ShallowRelu { w_self, w_nbr, bias } => {
                    check_mat(w_self, rows, cols, &format!("iteration {t} self weight"))?;
                    check_mat(w_nbr, rows, cols, &format!("iteration {t} neighbor weight"))?;
                    if cfg.aggregator != AggregatorKind::ShallowRelu {
                        return Err(NnError::ShapeMismatch(format!(
                            "iteration {t} block disagrees with the configured aggregator"
                        )));
                    }
                    bias
                }
            };
            if bias.len() != rows {
                return Err(NnError::ShapeMismatch(format!("iteration {t} bias length")));
            }
            if bias.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite(format!("iteration {t} bias")));
            }
        }
        match (&self.edge_scalars, cfg.edge_scalars) {
            (None, false) => {}
            (Some(s), true) => {
                if s.len() != cfg.iterations {
                    return Err(NnError::ShapeMismatch("edge scalar count".into()));
                }
                if s.iter().any(|e| !e.root.is_finite() || !e.child.is_finite()) {
                    return Err(NnError::NonFinite("edge scalars".into()));
                }
            }
            _ => {
                return Err(NnError::ShapeMismatch(
                    "edge scalar block disagrees with the configuration flag".into(),
                ))
            }
        }
        let types: Vec<u32> = self.heads.iter().map(|(t, _)| *t).collect();
        if types != cfg.head_types {
            return Err(NnError::ShapeMismatch("head types disagree with the configuration".into()));
        }
        let out = cfg.head.output_dim();
        for (t, h) in &self.heads {
            check_mat(&h.weight, out, cfg.hidden_dim, &format!("head {t} weight"))?;
            if h.bias.len() != out {
                return Err(NnError::ShapeMismatch(format!("head {t} bias length")));
            }
            if h.bias.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite(format!("head {t} bias")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Targets and losses
// ---------------------------------------------------------------------------

/// Supervision for a set of nodes: class labels or scalar regression values.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Labels(BTreeMap<NodeId, usize>),
    Values(BTreeMap<NodeId, f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Labels(m) => m.len(),
            Targets::Values(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mean data loss over the targeted nodes plus `l2·‖θ‖²`: cross-entropy
/// against class labels, squared error against regression values.
pub fn loss(
    outputs: &BTreeMap<NodeId, Vec<f64>>,
    targets: &Targets,
    l2: f64,
    params: &ModelParams,
) -> Result<f64, NnError> {
    Ok(data_loss(outputs, targets)? + l2 * params.squared_norm())
}

/// The data term of [`loss`] alone (mean over targeted nodes).
pub fn data_loss(outputs: &BTreeMap<NodeId, Vec<f64>>, targets: &Targets) -> Result<f64, NnError> {
    match targets {
        Targets::Labels(labels) => {
            let mut total = 0.0;
            for (&v, &label) in labels {
                let probs = outputs.get(&v).ok_or(NnError::MissingOutput(v))?;
                if label >= probs.len() {
                    return Err(NnError::LabelOutOfRange { node: v, got: label, classes: probs.len() });
                }
                // Outputs are softmax probabilities; the floor only guards
                // the log against denormal underflow.
                total -= probs[label].max(1e-300).ln();
            }
            Ok(if labels.is_empty() { 0.0 } else { total / labels.len() as f64 })
        }
        Targets::Values(values) => {
            let mut total = 0.0;
            for (&v, &y) in values {
                let out = outputs.get(&v).ok_or(NnError::MissingOutput(v))?;
                let diff = out[0] - y;
                total += diff * diff;
            }
            Ok(if values.is_empty() { 0.0 } else { total / values.len() as f64 })
        }
    }
}

/// Fraction of labeled nodes whose argmax class (lowest index on ties)
/// matches the label.
pub fn accuracy(
    outputs: &BTreeMap<NodeId, Vec<f64>>,
    labels: &BTreeMap<NodeId, usize>,
) -> Result<f64, NnError> {
    if labels.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (&v, &label) in labels {
        let probs = outputs.get(&v).ok_or(NnError::MissingOutput(v))?;
        let pred = probs
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, &p)| {
                if p > bv {
                    (i, p)
                } else {
                    (bi, bv)
                }
            })
            .0;
        if pred == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub const CHECKPOINT_FORMAT: &str = "neural-tree-checkpoint-v1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadEntry {
    node_type: u32,
    weight: Mat,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    format: String,
    config: ModelConfig,
    iters: Vec<IterParams>,
    edge_scalars: Option<Vec<EdgeScalars>>,
    heads: Vec<HeadEntry>,
}

impl ModelParams {
    /// Canonical checkpoint encoding: a format tag, the configuration, and
    /// every parameter tensor with its declared shape. Byte-stable.
    pub fn to_json_string(&self) -> String {
        let doc = CheckpointDoc {
            format: CHECKPOINT_FORMAT.to_owned(),
            config: self.config.clone(),
            iters: self.iters.clone(),
            edge_scalars: self.edge_scalars.clone(),
            heads: self
                .heads
                .iter()
                .map(|(t, h)| HeadEntry { node_type: *t, weight: h.weight.clone(), bias: h.bias.clone() })
                .collect(),
        };
        serde_json::to_string(&doc).expect("checkpoint serialization cannot fail")
    }

    /// Decodes and fully validates a checkpoint (format tag, shapes,
    /// finiteness).
    pub fn from_json_str(text: &str) -> Result<Self, NnError> {
        let doc: CheckpointDoc =
            serde_json::from_str(text).map_err(|e| NnError::Decode(e.to_string()))?;
        if doc.format != CHECKPOINT_FORMAT {
            return Err(NnError::Decode(format!(
                "unsupported checkpoint format {:?} (this build reads {CHECKPOINT_FORMAT:?})",
                doc.format
            )));
        }
        let params = ModelParams {
            config: doc.config,
            iters: doc.iters,
            edge_scalars: doc.edge_scalars,
            heads: doc.heads.into_iter().map(|h| (h.node_type, HeadParams { weight: h.weight, bias: h.bias })).collect(),
        };
        params.validate_shapes()?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            aggregator: AggregatorKind::GcnMean,
            head: HeadKind::Classification { num_classes: 3 },
            input_dim: 2,
            hidden_dim: 4,
            iterations: 2,
            dropout: 0.0,
            edge_scalars: false,
            head_types: vec![0],
        }
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = ModelParams::init(small_config(), 7).unwrap();
        let b = ModelParams::init(small_config(), 7).unwrap();
        assert_eq!(a, b);
        let c = ModelParams::init(small_config(), 8).unwrap();
        assert_ne!(a, c);
        a.validate_shapes().unwrap();
        // 4×2 + 4 (iter 0) + 4×4 + 4 (iter 1) + 3×4 + 3 (head).
        assert_eq!(a.num_params(), 12 + 20 + 15);
    }

    #[test]
    fn flatten_roundtrip() {
        let p = ModelParams::init(small_config(), 3).unwrap();
        let flat = p.flatten();
        let mut q = p.zeros_like();
        q.unflatten_from(&flat).unwrap();
        assert_eq!(p, q);
        assert!(q.unflatten_from(&flat[1..]).is_err());
    }

    #[test]
    fn config_guards() {
        let mut cfg = small_config();
        cfg.iterations = 0;
        assert!(matches!(ModelParams::init(cfg, 0), Err(NnError::ZeroIterations)));
        let mut cfg = small_config();
        cfg.dropout = 1.0;
        assert!(ModelParams::init(cfg, 0).is_err());
        let mut cfg = small_config();
        cfg.head_types = vec![1, 1];
        assert!(ModelParams::init(cfg, 0).is_err());
    }

    #[test]
    fn loss_values() {
        let p = ModelParams::zeros(small_config()).unwrap();
        let outputs: BTreeMap<NodeId, Vec<f64>> =
            [(1, vec![1.0 / 3.0; 3]), (2, vec![1.0 / 3.0; 3])].into();
        let targets = Targets::Labels([(1, 0), (2, 2)].into());
        // Uniform prediction over 3 classes costs ln 3 per node.
        let l = loss(&outputs, &targets, 0.0, &p).unwrap();
        assert!((l - 3.0f64.ln()).abs() < 1e-12);

        // Perfect prediction drives the loss to zero.
        let outputs: BTreeMap<NodeId, Vec<f64>> = [(1, vec![1.0, 0.0, 0.0])].into();
        let targets = Targets::Labels([(1, 0)].into());
        assert_eq!(loss(&outputs, &targets, 0.0, &p).unwrap(), 0.0);

        // The regularized and plain losses differ by exactly l2·‖θ‖².
        let p = ModelParams::init(small_config(), 5).unwrap();
        let a = loss(&outputs, &targets, 0.0, &p).unwrap();
        let b = loss(&outputs, &targets, 0.01, &p).unwrap();
        assert!((b - a - 0.01 * p.squared_norm()).abs() < 1e-12);

        // Out-of-range labels are rejected.
        let targets = Targets::Labels([(1, 3)].into());
        assert!(matches!(
            loss(&outputs, &targets, 0.0, &p),
            Err(NnError::LabelOutOfRange { node: 1, got: 3, classes: 3 })
        ));
    }

    #[test]
    fn accuracy_tie_breaks_low() {
        let outputs: BTreeMap<NodeId, Vec<f64>> =
            [(1, vec![0.5, 0.5]), (2, vec![0.2, 0.8])].into();
        let labels: BTreeMap<NodeId, usize> = [(1, 0), (2, 1)].into();
        assert_eq!(accuracy(&outputs, &labels).unwrap(), 1.0);
        let labels: BTreeMap<NodeId, usize> = [(1, 1), (2, 1)].into();
        assert_eq!(accuracy(&outputs, &labels).unwrap(), 0.5);
    }

    #[test]
    fn checkpoint_roundtrip_and_rejects() {
        let mut cfg = small_config();
        cfg.aggregator = AggregatorKind::ShallowRelu;
        cfg.edge_scalars = true;
        cfg.head_types = vec![0, 3];
        let p = ModelParams::init(cfg, 11).unwrap();
        let text = p.to_json_string();
        assert_eq!(ModelParams::from_json_str(&text).unwrap(), p);
        assert_eq!(text, p.to_json_string());
        assert!(text.starts_with(r#"{"format":"neural-tree-checkpoint-v1""#));

        // Wrong format tag.
        let other = text.replace("checkpoint-v1", "checkpoint-v0");
        assert!(matches!(ModelParams::from_json_str(&other), Err(NnError::Decode(_))));
        // Truncated tensor.
        let mut broken = p.clone();
        match &mut broken.iters[0] {
            IterParams::ShallowRelu { w_self, .. } => w_self.data.pop(),
            IterParams::GcnMean { weight, .. } => weight.data.pop(),
        };
        let text = broken.to_json_string();
        assert!(matches!(ModelParams::from_json_str(&text), Err(NnError::ShapeMismatch(_))));
    }
}
