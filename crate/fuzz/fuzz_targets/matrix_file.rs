//! AXLM decoder: must reject or round-trip, never panic or over-allocate.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = axllm::matfile::parse_matrix(data) {
        // the format has no redundant encodings: accepted bytes are exactly
        // the canonical serialization of what they decode to
        let bytes = axllm::matfile::encode_matrix(&m);
        assert_eq!(bytes, data);
        let again = axllm::matfile::parse_matrix(&bytes).expect("canonical form parses");
        assert_eq!(again, m);
    }
});
