//! The training loop: full-batch Adam over a graph dataset with early
//! stopping on validation accuracy (validation loss for regression).

use super::{
    mix_seed, Architecture, Dataset, PipelineError, SALT_DROPOUT, SALT_INIT, SALT_SUBSAMPLE,
};
use crate::graph::{Graph, NodeId};
use crate::htree::{build_htree, HTree};
use crate::nn::{
    baseline_gnn_forward, batch_loss_and_grads, loss, nt_forward, HeadKind, ModelConfig,
    ModelParams, Network, Targets, TrainItem,
};
use crate::subsample::sample_bounded_treewidth;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;

/// Optimization knobs, separate from the model shape so experiment configs
/// can share them across grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    /// Upper bound on epochs; early stopping usually ends sooner.
    pub epochs: usize,
    pub learning_rate: f64,
    /// Per-epoch multiplicative learning-rate decay in `(0, 1]`; 1 keeps
    /// the rate constant. Decay lets the optimizer settle to high precision
    /// instead of oscillating at step-size scale around the optimum.
    pub lr_decay: f64,
    /// Coefficient of the squared-parameter-norm penalty.
    pub weight_decay: f64,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 300,
            learning_rate: 0.01,
            lr_decay: 1.0,
            weight_decay: 0.0,
            patience: 100,
        }
    }
}

/// Everything one training run needs besides the dataset itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub architecture: Architecture,
    #[serde(default)]
    pub settings: TrainSettings,
    /// Neural-tree runs only: edge-subsample each graph to this certified
    /// treewidth before building its H-tree. The baseline always sees the
    /// original graph.
    #[serde(default)]
    pub treewidth_bound: Option<usize>,
    /// Fraction of the train split actually used (data-efficiency sweeps).
    #[serde(default = "full_fraction")]
    pub train_fraction: f64,
    /// Seed for initialization, dropout, and subsampling. Splitting is
    /// governed by the dataset's own seed.
    pub seed: u64,
}

fn full_fraction() -> f64 {
    1.0
}

/// One epoch's metrics. Accuracies are absent for regression tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
    /// Measured, not serialized: timing would break byte-identical reports.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

/// Full record of a training run; serializes byte-stably for a given
/// `(dataset, config)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub seed: u64,
    pub epochs: Vec<TrainEpoch>,
    /// Epoch whose parameters were kept (best validation metric).
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub final_test_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_test_accuracy: Option<f64>,
}

impl TrainReport {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("report serialization cannot fail")
    }

    pub fn from_json_str(text: &str) -> Result<TrainReport, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::BadParams(e.to_string()))
    }
}

// One dataset item, ready to run: the structure to pass messages on, and
// the supervision in the form the loss functions take.
struct Prepared {
    graph: Graph,
    htree: Option<HTree>,
    targets: Targets,
}

impl Prepared {
    fn network(&self, arch: Architecture) -> Network<'_> {
        match arch {
            Architecture::NeuralTree => {
                Network::Tree(self.htree.as_ref().expect("prepared with a tree"))
            }
            Architecture::BaselineGnn => Network::Graph(&self.graph),
        }
    }

    fn features(&self) -> &BTreeMap<NodeId, Vec<f64>> {
        self.graph.features().expect("validated at preparation")
    }
}

fn prepare_items(
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<Prepared>, PipelineError> {
    let classification = matches!(cfg.model.head, HeadKind::Classification { .. });
    let num_classes = cfg.model.head.output_dim();
    let mut out = Vec::with_capacity(dataset.graphs.len());
    for (idx, g) in dataset.graphs.iter().enumerate() {
        let feats = g
            .features()
            .ok_or_else(|| PipelineError::BadDataset(format!("graph {idx} has no features")))?;
        if let Some(f) = feats.values().find(|f| f.len() != cfg.model.input_dim) {
            return Err(PipelineError::BadDataset(format!(
                "graph {idx} has {}-dimensional features but the model expects {}",
                f.len(),
                cfg.model.input_dim
            )));
        }
        let targets = if classification {
            let labels = g.labels().ok_or_else(|| {
                PipelineError::BadDataset(format!("graph {idx} has no labels"))
            })?;
            if let Some((&v, &l)) = labels.iter().find(|(_, &l)| l as usize >= num_classes) {
                return Err(PipelineError::BadDataset(format!(
                    "graph {idx} labels node {v} as {l}, beyond the {num_classes} classes"
                )));
            }
            Targets::Labels(labels.iter().map(|(&v, &l)| (v, l as usize)).collect())
        } else {
            let values = g.targets().ok_or_else(|| {
                PipelineError::BadDataset(format!("graph {idx} has no regression targets"))
            })?;
            Targets::Values(values.clone())
        };
        let (graph, htree) = match cfg.architecture {
            Architecture::NeuralTree => {
                let base = match cfg.treewidth_bound {
                    Some(k) => {
                        let s = mix_seed(cfg.seed, SALT_SUBSAMPLE.wrapping_add(idx as u64));
                        sample_bounded_treewidth(g, k, s)?.subgraph
                    }
                    None => g.clone(),
                };
                let htree = build_htree(&base)?;
                (base, Some(htree))
            }
            Architecture::BaselineGnn => (g.clone(), None),
        };
        out.push(Prepared { graph, htree, targets });
    }
    Ok(out)
}

// Mean per-graph data loss and micro-averaged accuracy (None for
// regression) over a list of items, in evaluation mode.
fn evaluate(
    items: &[&Prepared],
    arch: Architecture,
    params: &ModelParams,
) -> Result<(f64, Option<f64>), PipelineError> {
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    let mut labeled = 0usize;
    let mut classification = false;
    for item in items {
        let outputs = match arch {
            Architecture::NeuralTree => {
                nt_forward(item.htree.as_ref().expect("prepared with a tree"), params, item.features())?
            }
            Architecture::BaselineGnn => baseline_gnn_forward(&item.graph, params, item.features())?,
        };
        total_loss += loss(&outputs, &item.targets, 0.0, params)?;
        if let Targets::Labels(labels) = &item.targets {
            classification = true;
            for (v, &label) in labels {
                let probs = &outputs[v];
                let pred = probs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probabilities"))
                    .map(|(i, _)| i)
                    .expect("nonempty output");
                correct += usize::from(pred == label);
                labeled += 1;
            }
        }
    }
    let mean_loss = total_loss / items.len() as f64;
    let acc = classification.then(|| correct as f64 / labeled.max(1) as f64);
    Ok((mean_loss, acc))
}

/// Trains per `cfg` and returns the report together with the best
/// parameters (by validation metric).
pub fn train_with_model(
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(TrainReport, ModelParams), PipelineError> {
    cfg.model.validate()?;
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction <= 1.0) {
        return Err(PipelineError::BadParams(format!(
            "train_fraction {} outside (0, 1]",
            cfg.train_fraction
        )));
    }
    if cfg.settings.epochs == 0 {
        return Err(PipelineError::BadParams("at least one epoch is required".into()));
    }
    if !(cfg.settings.lr_decay > 0.0 && cfg.settings.lr_decay <= 1.0) {
        return Err(PipelineError::BadParams(format!(
            "lr_decay {} outside (0, 1]",
            cfg.settings.lr_decay
        )));
    }
    let splits = dataset.split_indices()?;
    let prepared = prepare_items(dataset, cfg)?;

    let keep = ((cfg.train_fraction * splits.train.len() as f64).ceil() as usize)
        .clamp(1, splits.train.len());
    let train_items: Vec<&Prepared> =
        splits.train[..keep].iter().map(|&i| &prepared[i]).collect();
    let val_items: Vec<&Prepared> = splits.val.iter().map(|&i| &prepared[i]).collect();
    let test_items: Vec<&Prepared> = splits.test.iter().map(|&i| &prepared[i]).collect();

    let mut params = ModelParams::init(cfg.model.clone(), mix_seed(cfg.seed, SALT_INIT))?;
    let mut dropout_rng = ChaCha20Rng::seed_from_u64(mix_seed(cfg.seed, SALT_DROPOUT));

    // Adam state, flat over the canonical parameter order.
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const ADAM_EPS: f64 = 1e-8;
    let mut moment = vec![0.0; params.num_params()];
    let mut second = vec![0.0; params.num_params()];
    let mut beta1_pow = 1.0;
    let mut beta2_pow = 1.0;

    let mut epochs = Vec::new();
    let mut best_params = params.clone();
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=cfg.settings.epochs {
        let started = Instant::now();
        let batch: Vec<TrainItem<'_>> = train_items
            .iter()
            .map(|p| TrainItem {
                net: p.network(cfg.architecture),
                x: p.features(),
                targets: &p.targets,
            })
            .collect();
        let (_, grads) = batch_loss_and_grads(
            &params,
            &batch,
            cfg.settings.weight_decay,
            Some(&mut dropout_rng),
        )?;
        drop(batch);
        let flat_grads = grads.flatten();
        let lr = cfg.settings.learning_rate * cfg.settings.lr_decay.powi(epoch as i32 - 1);
        beta1_pow *= BETA1;
        beta2_pow *= BETA2;
        for (i, theta) in params.values_mut().enumerate() {
            let g = flat_grads[i];
            moment[i] = BETA1 * moment[i] + (1.0 - BETA1) * g;
            second[i] = BETA2 * second[i] + (1.0 - BETA2) * g * g;
            let m_hat = moment[i] / (1.0 - beta1_pow);
            let v_hat = second[i] / (1.0 - beta2_pow);
            *theta -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }

        let (train_loss, train_accuracy) = evaluate(&train_items, cfg.architecture, &params)?;
        let (val_loss, val_accuracy) = evaluate(&val_items, cfg.architecture, &params)?;
        epochs.push(TrainEpoch {
            epoch,
            train_loss,
            val_loss,
            train_accuracy,
            val_accuracy,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        });

        let metric = val_accuracy.unwrap_or(-val_loss);
        if metric > best_metric {
            best_metric = metric;
            best_params = params.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.settings.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (final_test_loss, final_test_accuracy) =
        evaluate(&test_items, cfg.architecture, &best_params)?;
    let report = TrainReport {
        config: cfg.clone(),
        seed: cfg.seed,
        epochs,
        best_epoch,
        stopped_early,
        final_test_loss,
        final_test_accuracy,
    };
    Ok((report, best_params))
}

/// Trains per `cfg` and returns the report alone.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainReport, PipelineError> {
    train_with_model(dataset, cfg).map(|(report, _)| report)
}
