#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rec) = tradyn::dataset::parse_record(data) {
        // Accepted records are internally consistent.
        assert_eq!(rec.states.len(), rec.actions.len() + 1);
    }
});
