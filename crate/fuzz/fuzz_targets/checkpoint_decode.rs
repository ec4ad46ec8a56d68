#![no_main]

use libfuzzer_sys::fuzz_target;
use tradyn::model::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    // Anything that decodes must re-encode to a checkpoint that decodes the same.
    if let Ok(ckpt) = decode_checkpoint(data) {
        let again = decode_checkpoint(&encode_checkpoint(&ckpt)).expect("re-encoded checkpoint decodes");
        assert_eq!(again.step, ckpt.step);
        assert_eq!(again.model.params.values, ckpt.model.params.values);
    }
});
