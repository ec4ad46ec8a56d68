#![no_main]

use libfuzzer_sys::fuzz_target;
use tradyn::config::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = PipelineConfig::from_toml(text) {
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).expect("round trip"), cfg);
    }
});
