#![no_main]

use libfuzzer_sys::fuzz_target;
use tradyn::terrain::TerrainLayout;

fuzz_target!(|data: &[u8]| {
    if let Ok(layout) = TerrainLayout::from_png(0, 0, data) {
        let mu = layout.friction_at([0.5, 0.5]);
        assert!((0.1..=10.0).contains(&mu));
    }
});
