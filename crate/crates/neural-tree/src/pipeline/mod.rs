//! Dataset synthesis, train/val/test splitting, the training loop, and the
//! experiment harnesses built on top of it.
//!
//! Everything here is reproducible bit-for-bit from `(config, seed)`: every
//! random choice flows from a caller-provided seed through salted,
//! independent ChaCha streams, and all floating-point reductions run in a
//! fixed order (parallel experiment tasks are seeded independently and
//! assembled positionally).

mod experiments;
mod generate;
mod train;

pub use experiments::{
    approx_to_csv, approximation_experiment, experiment_curves, ApproxRow, Axis, CurveRow,
    CurveTable, ExperimentConfig,
};
pub use generate::{
    generate_synthetic, GenerateSpec, PgmLabelsParams, RegressionParams, SceneLikeParams,
    SCENE_FEATURE_DIM, SCENE_NUM_CLASSES,
};
pub use train::{train, train_with_model, TrainConfig, TrainEpoch, TrainReport, TrainSettings};

use crate::graph::{Graph, GraphError};
use crate::htree::{build_htree, htree_stats, HtreeError};
use crate::nn::NnError;
use crate::pgm::PgmError;
use crate::subsample::SubsampleError;
use crate::treedecomp::DecompError;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error("dataset problem: {0}")]
    BadDataset(String),
    #[error("the {0} split is empty; adjust the split spec or dataset size")]
    EmptySplit(&'static str),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Decomp(#[from] DecompError),
    #[error(transparent)]
    Htree(#[from] HtreeError),
    #[error(transparent)]
    Subsample(#[from] SubsampleError),
    #[error(transparent)]
    Pgm(#[from] PgmError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

// Distinct salts keep the seed streams for unrelated random choices
// independent even though they all descend from one user-facing seed.
pub(crate) const SALT_SPLIT: u64 = 1;
pub(crate) const SALT_INIT: u64 = 2;
pub(crate) const SALT_DROPOUT: u64 = 3;
pub(crate) const SALT_SUBSAMPLE: u64 = 4;
pub(crate) const SALT_DATA: u64 = 5;
pub(crate) const SALT_REPEAT: u64 = 6;
pub(crate) const SALT_WIDTH: u64 = 7;

/// SplitMix64-style mixer: derives a child seed from a parent seed and a
/// salt, so sibling streams (splits, init, dropout, ...) never collide.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Which message-passing structure a model runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Messages flow on the H-tree of each graph.
    NeuralTree,
    /// Messages flow on the graph itself.
    BaselineGnn,
}

impl Architecture {
    pub fn as_str(&self) -> &'static str {
        match self {
            Architecture::NeuralTree => "neural_tree",
            Architecture::BaselineGnn => "baseline_gnn",
        }
    }
}

/// How a dataset divides into train/validation/test. The test portion is
/// always the remainder, so the three parts partition the dataset exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSpec {
    /// Fractions of the dataset (rounded to counts); `train + val < 1`.
    Fractions { train: f64, val: f64 },
    /// Absolute graph counts; `train + val < dataset size`.
    Counts { train: usize, val: usize },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Fractions { train: 0.7, val: 0.1 }
    }
}

impl SplitSpec {
    fn sizes(&self, n: usize) -> Result<(usize, usize), PipelineError> {
        match *self {
            SplitSpec::Fractions { train, val } => {
                if !(train > 0.0 && val >= 0.0 && train + val < 1.0) {
                    return Err(PipelineError::BadParams(format!(
                        "split fractions train={train} val={val} must satisfy 0 < train, 0 <= val, train + val < 1"
                    )));
                }
                Ok(((train * n as f64).round() as usize, (val * n as f64).round() as usize))
            }
            SplitSpec::Counts { train, val } => Ok((train, val)),
        }
    }
}

/// A list of graphs plus the split policy and the seed that drives every
/// random choice made with the data (shuffling, subsampling, ...).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graphs: Vec<Graph>,
    pub split: SplitSpec,
    pub seed: u64,
}

/// Disjoint index lists into `Dataset::graphs`; together they cover it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    /// Shuffles graph indices with the dataset seed and cuts them into the
    /// three splits. Errors if any split would be empty.
    pub fn split_indices(&self) -> Result<SplitIndices, PipelineError> {
        let n = self.graphs.len();
        let (n_train, n_val) = self.split.sizes(n)?;
        if n_train == 0 {
            return Err(PipelineError::EmptySplit("train"));
        }
        if n_val == 0 {
            return Err(PipelineError::EmptySplit("val"));
        }
        if n_train + n_val >= n {
            return Err(PipelineError::EmptySplit("test"));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(self.seed, SALT_SPLIT));
        order.shuffle(&mut rng);
        let test = order.split_off(n_train + n_val);
        let val = order.split_off(n_train);
        Ok(SplitIndices { train: order, val, test })
    }
}

/// Mean H-tree diameter over a set of graphs; the usual choice for the
/// number of message-passing iterations.
pub fn mean_htree_diameter(graphs: &[Graph]) -> Result<f64, PipelineError> {
    if graphs.is_empty() {
        return Err(PipelineError::BadDataset("no graphs to measure".into()));
    }
    let mut total = 0usize;
    for g in graphs {
        total += htree_stats(&build_htree(g)?).diameter;
    }
    Ok(total as f64 / graphs.len() as f64)
}
