#![no_main]

use libfuzzer_sys::fuzz_target;
use rim_core::mlp::Checkpoint;

fuzz_target!(|data: &[u8]| {
    // A successful decode must survive a re-encode unchanged.
    if let Ok(ck) = Checkpoint::decode(data) {
        assert_eq!(ck.encode(), data);
    }
});
