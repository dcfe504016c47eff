#![no_main]

use amr_core::dataset::{load_observations_from_reader, ColumnSchema};
use libfuzzer_sys::fuzz_target;

const TABLE: &str = "y,a,x1,x2,x10,z,w_1\n1.0,1,0.5,0.1,2,3,4\n0.0,0,-0.5,0.2,1,2,3\n";

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(schema) = ColumnSchema::new("y", "a", text) {
        if let Ok(obs) = load_observations_from_reader(TABLE.as_bytes(), &schema) {
            assert!(obs.p() >= 1 && obs.p() <= 5);
            assert!(obs.covariate_names().iter().all(|n| n != "y" && n != "a"));
        }
    }
});
