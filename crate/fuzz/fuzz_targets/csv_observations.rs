#![no_main]

use amr_core::dataset::{load_observations_from_reader, ColumnSchema};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let schema = ColumnSchema::new("y", "a", "x*").unwrap();
    if let Ok(obs) = load_observations_from_reader(data, &schema) {
        assert_eq!(obs.y().len(), obs.n());
        assert_eq!(obs.x().nrows(), obs.n());
        assert!(obs.y().iter().all(|v| v.is_finite()));
        assert!(obs.x().iter().all(|v| v.is_finite()));
    }
});
