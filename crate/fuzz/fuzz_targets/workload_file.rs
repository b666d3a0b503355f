//! Workload description parser: accepted specs must have bounded derived
//! counts and survive a serialize/parse round trip unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(spec) = axllm::workload::WorkloadSpec::parse(text) {
        let layers = spec.expanded_layers();
        assert!(layers.len() as u64 <= axllm::workload::MAX_TOTAL_LAYERS);
        let _ = spec.total_weights();
        let echo = axllm::report::toml_string(&spec).expect("validated spec serializes");
        let again = axllm::workload::WorkloadSpec::parse(&echo).expect("round trip parses");
        assert_eq!(again, spec);
    }
});
