#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = tradyn::dataset::read_dataset(std::io::Cursor::new(data));
});
