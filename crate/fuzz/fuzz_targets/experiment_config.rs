#![no_main]

use amr_core::config::parse_experiment_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = parse_experiment_config(text) {
            assert!(cfg.reps >= 1);
            assert!(!cfg.cells().is_empty());
        }
    }
});
