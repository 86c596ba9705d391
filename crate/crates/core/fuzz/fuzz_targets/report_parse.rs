#![no_main]

use libfuzzer_sys::fuzz_target;
use rim_core::report::{read_rows_csv, MetricsReport};

fuzz_target!(|data: &[u8]| {
    // Both report inputs: the JSON document and the client-row CSV.
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = MetricsReport::from_json(text);
    }
    if let Ok(rows) = read_rows_csv(data) {
        let _ = MetricsReport::aggregate(rows);
    }
});
