//! Procedural terrain layouts over the unit square.
//!
//! A layout is a 460×460 RGB raster. The robot observes the normalised colour
//! `τ ∈ [0,1]³`; the simulator converts the raw colour into a friction
//! coefficient by packing it into a 24-bit integer.

use std::io::Cursor;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::render::{decode_rgb_png, encode_rgb_png};
use crate::{Error, Result};

/// Raster side length in pixels.
pub const TERRAIN_SIZE: usize = 460;
pub const MIN_FRICTION: f64 = 0.1;
pub const MAX_FRICTION: f64 = 10.0;
/// Number of layouts in each of the train and test splits.
pub const SPLIT_SIZE: usize = 50;

const PACKED_MAX: f64 = ((1u32 << 24) - 1) as f64;

/// Friction coefficient of a raw terrain colour.
pub fn rgb_to_friction(r: u8, g: u8, b: u8) -> f64 {
    let packed = ((r as u32) << 16) + ((g as u32) << 8) + b as u32;
    let eta = packed as f64 / PACKED_MAX;
    MIN_FRICTION + (MAX_FRICTION - MIN_FRICTION) * eta * eta
}

/// Anything that can be queried for a normalised terrain feature at a position.
pub trait TerrainQuery: Sync {
    fn feature(&self, p: [f64; 2]) -> [f64; 3];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, PartialEq, Eq)]
pub struct TerrainLayout {
    pub id: u32,
    pub seed: u64,
    pixels: Vec<[u8; 3]>,
}

impl std::fmt::Debug for TerrainLayout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TerrainLayout")
            .field("id", &self.id)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

/// Raster cell containing `p`, clamped to the boundary.
pub fn cell_index(p: [f64; 2]) -> (usize, usize) {
    let to_cell = |c: f64| {
        // NaN maps to cell 0 through the saturating float cast.
        let scaled = (c.clamp(0.0, 1.0) * TERRAIN_SIZE as f64).floor();
        (scaled as usize).min(TERRAIN_SIZE - 1)
    };
    (to_cell(p[0]), to_cell(p[1]))
}

impl TerrainLayout {
    pub fn from_pixels(id: u32, seed: u64, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if pixels.len() != TERRAIN_SIZE * TERRAIN_SIZE {
            return Err(Error::Format(format!(
                "terrain raster must have {} pixels, got {}",
                TERRAIN_SIZE * TERRAIN_SIZE,
                pixels.len()
            )));
        }
        Ok(Self { id, seed, pixels })
    }

    /// A layout filled with a single colour.
    pub fn uniform(rgb: [u8; 3]) -> Self {
        Self {
            id: 0,
            seed: 0,
            pixels: vec![rgb; TERRAIN_SIZE * TERRAIN_SIZE],
        }
    }

    /// Pixel at column `ix` (x axis) and row `iy` (y axis).
    pub fn pixel(&self, ix: usize, iy: usize) -> [u8; 3] {
        self.pixels[iy * TERRAIN_SIZE + ix]
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn raw_at(&self, p: [f64; 2]) -> [u8; 3] {
        let (ix, iy) = cell_index(p);
        self.pixel(ix, iy)
    }

    pub fn feature_at(&self, p: [f64; 2]) -> [f64; 3] {
        let [r, g, b] = self.raw_at(p);
        [r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0]
    }

    pub fn friction_at(&self, p: [f64; 2]) -> f64 {
        let [r, g, b] = self.raw_at(p);
        rgb_to_friction(r, g, b)
    }

    pub fn distinct_colors(&self) -> usize {
        let mut seen: Vec<[u8; 3]> = Vec::new();
        for px in &self.pixels {
            if !seen.contains(px) {
                seen.push(*px);
            }
        }
        seen.len()
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let flat: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        encode_rgb_png(TERRAIN_SIZE as u32, TERRAIN_SIZE as u32, &flat)
    }

    /// Decodes a 460×460 8-bit RGB PNG.
    pub fn from_png(id: u32, seed: u64, bytes: &[u8]) -> Result<Self> {
        let (w, h, data) = decode_rgb_png(Cursor::new(bytes), TERRAIN_SIZE as u32)?;
        if w as usize != TERRAIN_SIZE || h as usize != TERRAIN_SIZE {
            return Err(Error::Format(format!(
                "terrain PNG must be {TERRAIN_SIZE}x{TERRAIN_SIZE}, got {w}x{h}"
            )));
        }
        let pixels = data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Self::from_pixels(id, seed, pixels)
    }
}

impl TerrainQuery for TerrainLayout {
    fn feature(&self, p: [f64; 2]) -> [f64; 3] {
        self.feature_at(p)
    }
}

/// Patch outline parameters.
const MIN_PATCHES: usize = 3;
const MAX_PATCHES: usize = 8;
const SEGMENTS_PER_PATCH: usize = 4;
const MIN_RADIUS: f64 = 0.05;
const MAX_RADIUS: f64 = 0.3;
const SAMPLES_PER_SEGMENT: usize = 24;

/// Generates a layout: a uniformly coloured background overlaid with closed
/// regions bounded by chains of cubic Bézier segments.
pub fn generate_terrain(seed: u64) -> TerrainLayout {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background: [u8; 3] = rng.random();
    let mut pixels = vec![background; TERRAIN_SIZE * TERRAIN_SIZE];
    let n_patches = rng.random_range(MIN_PATCHES..=MAX_PATCHES);
    for _ in 0..n_patches {
        let outline = sample_patch_outline(&mut rng);
        let color: [u8; 3] = rng.random();
        fill_polygon(&mut pixels, &outline, color);
    }
    TerrainLayout {
        id: 0,
        seed,
        pixels,
    }
}

fn sample_patch_outline(rng: &mut impl Rng) -> Vec<[f64; 2]> {
    let size = TERRAIN_SIZE as f64;
    let center = [rng.random::<f64>() * size, rng.random::<f64>() * size];
    let n_ctrl = 3 * SEGMENTS_PER_PATCH;
    let sector = std::f64::consts::TAU / n_ctrl as f64;
    // Control points in polar form around the centre with monotone angles.
    let ctrl: Vec<[f64; 2]> = (0..n_ctrl)
        .map(|i| {
            let angle = (i as f64 + rng.random_range(-0.4..0.4)) * sector;
            let radius = rng.random_range(MIN_RADIUS..MAX_RADIUS) * size;
            [
                center[0] + radius * angle.cos(),
                center[1] + radius * angle.sin(),
            ]
        })
        .collect();
    let mut outline = Vec::with_capacity(SEGMENTS_PER_PATCH * SAMPLES_PER_SEGMENT);
    for seg in 0..SEGMENTS_PER_PATCH {
        let p0 = ctrl[3 * seg];
        let p1 = ctrl[3 * seg + 1];
        let p2 = ctrl[3 * seg + 2];
        let p3 = ctrl[(3 * seg + 3) % n_ctrl];
        for k in 0..SAMPLES_PER_SEGMENT {
            let t = k as f64 / SAMPLES_PER_SEGMENT as f64;
            outline.push(cubic_bezier(p0, p1, p2, p3, t));
        }
    }
    outline
}

fn cubic_bezier(p0: [f64; 2], p1: [f64; 2], p2: [f64; 2], p3: [f64; 2], t: f64) -> [f64; 2] {
    let s = 1.0 - t;
    let (a, b, c, d) = (s * s * s, 3.0 * s * s * t, 3.0 * s * t * t, t * t * t);
    [
        a * p0[0] + b * p1[0] + c * p2[0] + d * p3[0],
        a * p0[1] + b * p1[1] + c * p2[1] + d * p3[1],
    ]
}

/// Even-odd scanline fill, sampling at pixel centres.
fn fill_polygon(pixels: &mut [[u8; 3]], poly: &[[f64; 2]], color: [u8; 3]) {
    let n = poly.len();
    let mut xs = Vec::with_capacity(16);
    for iy in 0..TERRAIN_SIZE {
        let y = iy as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            if (a[1] <= y) != (b[1] <= y) {
                xs.push(a[0] + (y - a[1]) / (b[1] - a[1]) * (b[0] - a[0]));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let start = (pair[0] - 0.5).ceil().max(0.0) as usize;
            let end = (pair[1] - 0.5).ceil().min(TERRAIN_SIZE as f64).max(0.0) as usize;
            for ix in start..end {
                pixels[iy * TERRAIN_SIZE + ix] = color;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TerrainSets {
    pub train: Vec<TerrainLayout>,
    pub test: Vec<TerrainLayout>,
}

impl TerrainSets {
    pub fn get(&self, id: u32) -> Option<&TerrainLayout> {
        self.train.iter().chain(&self.test).find(|t| t.id == id)
    }
}

/// Derives 100 distinct child seeds from `master_seed`; ids 0..50 form the
/// training split and ids 50..100 the test split.
pub fn make_terrain_sets(master_seed: u64) -> TerrainSets {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let mut seeds: Vec<u64> = Vec::with_capacity(2 * SPLIT_SIZE);
    while seeds.len() < 2 * SPLIT_SIZE {
        let s = rng.next_u64();
        if !seeds.contains(&s) {
            seeds.push(s);
        }
    }
    let mut layouts: Vec<TerrainLayout> = seeds
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let mut t = generate_terrain(s);
            t.id = i as u32;
            t
        })
        .collect();
    let test = layouts.split_off(SPLIT_SIZE);
    TerrainSets {
        train: layouts,
        test,
    }
}

/// JSON sidecar stored next to each terrain PNG.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainSidecar {
    pub id: u32,
    pub seed: u64,
    pub split: Split,
}

impl TerrainSidecar {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("terrain sidecar: {e}")))
    }
}

fn terrain_stem(id: u32) -> String {
    format!("terrain_{id:03}")
}

/// Writes `terrain_XXX.png` plus `terrain_XXX.json` for every layout.
pub fn save_terrain_sets(sets: &TerrainSets, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (split, layouts) in [(Split::Train, &sets.train), (Split::Test, &sets.test)] {
        for t in layouts {
            let stem = terrain_stem(t.id);
            let png_path = dir.join(format!("{stem}.png"));
            std::fs::write(&png_path, t.to_png()?).map_err(|e| Error::io(&png_path, e))?;
            let meta = TerrainSidecar {
                id: t.id,
                seed: t.seed,
                split,
            };
            let json_path = dir.join(format!("{stem}.json"));
            let text = serde_json::to_string_pretty(&meta).expect("sidecar serialises");
            std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
            written.push(png_path);
            written.push(json_path);
        }
    }
    Ok(written)
}

pub fn load_terrain(png_path: &Path) -> Result<(TerrainLayout, Split)> {
    let json_path = png_path.with_extension("json");
    let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let meta = TerrainSidecar::from_json(&text)?;
    let bytes = std::fs::read(png_path).map_err(|e| Error::io(png_path, e))?;
    Ok((TerrainLayout::from_png(meta.id, meta.seed, &bytes)?, meta.split))
}

/// Loads a directory written by [`save_terrain_sets`].
pub fn load_terrain_sets(dir: &Path) -> Result<TerrainSets> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    entries.sort();
    let mut sets = TerrainSets {
        train: Vec::new(),
        test: Vec::new(),
    };
    for path in entries {
        let (layout, split) = load_terrain(&path)?;
        match split {
            Split::Train => sets.train.push(layout),
            Split::Test => sets.test.push(layout),
        }
    }
    if sets.train.is_empty() || sets.test.is_empty() {
        return Err(Error::Format(format!(
            "terrain directory {} must contain both train and test layouts",
            dir.display()
        )));
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn friction_endpoints_are_exact() {
        assert_eq!(rgb_to_friction(0, 0, 0), 0.1);
        assert_eq!(rgb_to_friction(255, 255, 255), 10.0);
    }

    #[test]
    fn friction_of_mid_grey() {
        // η = 8421504 / 16777215
        let eta = 8_421_504.0 / 16_777_215.0;
        let expected = 0.1 + 9.9 * eta * eta;
        assert!((rgb_to_friction(128, 128, 128) - expected).abs() < 1e-15);
        assert!((rgb_to_friction(128, 128, 128) - 2.5944).abs() < 1e-4);
    }

    #[test]
    fn uniform_layout_queries() {
        let white = TerrainLayout::uniform([255, 255, 255]);
        assert_eq!(white.feature_at([0.5, 0.5]), [1.0, 1.0, 1.0]);
        assert_eq!(white.friction_at([0.3, 0.9]), 10.0);
        let black = TerrainLayout::uniform([0, 0, 0]);
        assert_eq!(black.feature_at([0.1, 0.7]), [0.0, 0.0, 0.0]);
        assert_eq!(black.friction_at([0.1, 0.7]), 0.1);
    }

    #[test]
    fn out_of_range_positions_clamp() {
        let t = generate_terrain(3);
        assert_eq!(t.feature_at([-0.2, 0.5]), t.feature_at([0.0, 0.5]));
        assert_eq!(t.feature_at([1.7, 2.0]), t.feature_at([1.0, 1.0]));
        assert_eq!(cell_index([1.0, 1.0]), (459, 459));
        assert_eq!(cell_index([f64::NAN, 0.0]), (0, 0));
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate_terrain(42), generate_terrain(42));
        assert_ne!(generate_terrain(42).pixels, generate_terrain(43).pixels);
    }

    #[test]
    fn sets_are_disjoint_and_sized() {
        let sets = make_terrain_sets(7);
        assert_eq!(sets.train.len(), 50);
        assert_eq!(sets.test.len(), 50);
        for t in &sets.train {
            assert!(sets.test.iter().all(|u| u.seed != t.seed));
        }
        assert_eq!(sets.get(63).unwrap().id, 63);
    }

    #[test]
    fn png_round_trip_is_lossless() {
        let t = generate_terrain(11);
        let back = TerrainLayout::from_png(t.id, t.seed, &t.to_png().unwrap()).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn png_with_wrong_size_is_rejected() {
        let bytes = encode_rgb_png(4, 4, &[0u8; 48]).unwrap();
        assert!(TerrainLayout::from_png(0, 0, &bytes).is_err());
    }

    #[test]
    fn sidecar_rejects_unknown_split() {
        assert!(TerrainSidecar::from_json(r#"{"id":1,"seed":2,"split":"val"}"#).is_err());
        let ok = TerrainSidecar::from_json(r#"{"id":1,"seed":2,"split":"test"}"#).unwrap();
        assert_eq!(ok.split, Split::Test);
    }
}
