//! Dataset files (one graph document per line): decoding must never panic,
//! and a decoded dataset must survive a re-encode/decode round trip.

#![no_main]

use libfuzzer_sys::fuzz_target;
use neural_tree::graph::{dataset_from_jsonl, dataset_to_jsonl};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(graphs) = dataset_from_jsonl(text) {
        let encoded = dataset_to_jsonl(&graphs);
        let back = dataset_from_jsonl(&encoded).expect("canonical encoding re-decodes");
        assert_eq!(back, graphs, "round trip changed the dataset");
    }
});
