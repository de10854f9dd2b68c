//! Graph documents: decoding arbitrary bytes must never panic, and any
//! document that decodes must survive a re-encode/decode round trip
//! unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;
use neural_tree::graph::Graph;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(g) = Graph::from_json_str(text) {
        let encoded = g.to_json_string();
        let back = Graph::from_json_str(&encoded).expect("canonical encoding re-decodes");
        assert_eq!(back, g, "round trip changed the graph");
    }
});
