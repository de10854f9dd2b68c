//! Discrete model documents: decoding (which also validates cliques against
//! the implied graph and checks every table) must never panic, and accepted
//! models must survive a re-encode/decode round trip.

#![no_main]

use libfuzzer_sys::fuzz_target;
use neural_tree::pgm::DiscretePgm;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = DiscretePgm::from_json_str(text) {
        let encoded = model.to_json_string();
        let back = DiscretePgm::from_json_str(&encoded).expect("canonical encoding re-decodes");
        assert_eq!(back, model, "round trip changed the model");
    }
});
