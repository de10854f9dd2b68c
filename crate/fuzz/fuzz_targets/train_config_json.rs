//! Training job documents, as accepted by `ntree train --config`. The CLI
//! keeps its own private document struct, so this target mirrors that shape
//! field for field out of public library types; decoding plus validating the
//! embedded model configuration must never panic.

#![no_main]

use libfuzzer_sys::fuzz_target;
use neural_tree::nn::ModelConfig;
use neural_tree::pipeline::{Architecture, SplitSpec, TrainSettings};
use serde::Deserialize;

fn full_fraction() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(dead_code)]
struct TrainJobDoc {
    model: ModelConfig,
    architecture: Architecture,
    #[serde(default)]
    settings: TrainSettings,
    #[serde(default)]
    treewidth_bound: Option<usize>,
    #[serde(default = "full_fraction")]
    train_fraction: f64,
    seed: u64,
    #[serde(default)]
    split: SplitSpec,
    #[serde(default)]
    dataset_seed: Option<u64>,
}

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(doc) = serde_json::from_str::<TrainJobDoc>(text) {
        // Validation may reject the document, but it must not panic.
        let _ = doc.model.validate();
    }
});
