//! Model checkpoints: decoding untrusted parameter files must never panic,
//! and accepted checkpoints must round trip. Values are compared through
//! their bit patterns so non-finite entries cannot weaken the check.

#![no_main]

use libfuzzer_sys::fuzz_target;
use neural_tree::nn::ModelParams;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(params) = ModelParams::from_json_str(text) {
        let encoded = params.to_json_string();
        let back = ModelParams::from_json_str(&encoded).expect("canonical encoding re-decodes");
        let a: Vec<u64> = params.flatten().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.flatten().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b, "round trip changed the parameter values");
    }
});
