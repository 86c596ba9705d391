#![no_main]

use libfuzzer_sys::fuzz_target;
use rim_core::sensorsim::{process_trace, read_trace_csv, SensorConfig};

fuzz_target!(|data: &[u8]| {
    if let Ok(trace) = read_trace_csv(data) {
        let _ = process_trace(&trace, &SensorConfig::default());
    }
});
