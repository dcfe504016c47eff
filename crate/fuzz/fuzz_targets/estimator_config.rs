#![no_main]

use amr_core::config::parse_estimator_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = parse_estimator_config(text) {
            assert!(cfg.validate().is_ok());
            let _ = cfg.fingerprint();
        }
    }
});
