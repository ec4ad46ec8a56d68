//! PNG encoding and a small raster canvas for trajectory overlays and plots.
//!
//! Colours and marker glyphs are fixed so rendered images are byte-stable.

use std::io::{BufRead, Seek};

use crate::terrain::{TerrainLayout, TERRAIN_SIZE};
use crate::{Error, Result};

pub type Rgb = [u8; 3];

pub const WHITE: Rgb = [255, 255, 255];
pub const BLACK: Rgb = [0, 0, 0];
pub const GREY: Rgb = [190, 190, 190];

/// Fixed per-variant palette: (−T,−C), (−T,+C), (+T,−C), (+T,+C).
pub const VARIANT_COLORS: [Rgb; 4] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
];

pub fn encode_rgb_png(width: u32, height: u32, data: &[u8]) -> Result<Vec<u8>> {
    if data.len() != (width as usize) * (height as usize) * 3 {
        return Err(Error::InvalidInput("RGB buffer size mismatch".into()));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Format(format!("png header: {e}")))?;
        writer
            .write_image_data(data)
            .map_err(|e| Error::Format(format!("png data: {e}")))?;
    }
    Ok(out)
}

/// Decodes an 8-bit RGB PNG whose sides do not exceed `max_side`.
pub fn decode_rgb_png<R: BufRead + Seek>(reader: R, max_side: u32) -> Result<(u32, u32, Vec<u8>)> {
    let limits = png::Limits {
        bytes: (max_side as usize) * (max_side as usize) * 4 + 4096,
    };
    let decoder = png::Decoder::new_with_limits(reader, limits);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    let info = reader.info();
    let (w, h) = (info.width, info.height);
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "expected 8-bit RGB PNG, found {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    if w > max_side || h > max_side {
        return Err(Error::Format(format!("png too large: {w}x{h}")));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("png: output size overflow".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    buf.truncate(frame.buffer_size());
    if buf.len() != (w as usize) * (h as usize) * 3 {
        return Err(Error::Format("png: unexpected frame size".into()));
    }
    Ok((w, h, buf))
}

pub struct Canvas {
    pub width: usize,
    pub height: usize,
    data: Vec<u8>,
}

impl Canvas {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&fill);
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Terrain raster with the y axis pointing up.
    pub fn from_terrain(layout: &TerrainLayout) -> Self {
        let mut c = Self::new(TERRAIN_SIZE, TERRAIN_SIZE, BLACK);
        for iy in 0..TERRAIN_SIZE {
            for ix in 0..TERRAIN_SIZE {
                c.set(ix as i64, (TERRAIN_SIZE - 1 - iy) as i64, layout.pixel(ix, iy));
            }
        }
        c
    }

    pub fn set(&mut self, x: i64, y: i64, color: Rgb) {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&color);
    }

    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb) {
        for y in y0..y1 {
            for x in x0..x1 {
                self.set(x, y, color);
            }
        }
    }

    /// Bresenham line with a square pen of side `2 * half_width + 1`.
    pub fn line(&mut self, a: (i64, i64), b: (i64, i64), half_width: i64, color: Rgb) {
        let (mut x, mut y) = a;
        let dx = (b.0 - a.0).abs();
        let dy = -(b.1 - a.1).abs();
        let sx = if a.0 < b.0 { 1 } else { -1 };
        let sy = if a.1 < b.1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.fill_rect(
                x - half_width,
                y - half_width,
                x + half_width + 1,
                y + half_width + 1,
                color,
            );
            if (x, y) == b {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    pub fn cross(&mut self, center: (i64, i64), arm: i64, color: Rgb) {
        let (cx, cy) = center;
        self.line((cx - arm, cy - arm), (cx + arm, cy + arm), 1, color);
        self.line((cx - arm, cy + arm), (cx + arm, cy - arm), 1, color);
    }

    /// Copies `other` with its top-left corner at `(x0, y0)`, clipping at the border.
    pub fn blit(&mut self, other: &Canvas, x0: i64, y0: i64) {
        for y in 0..other.height {
            for x in 0..other.width {
                let i = 3 * (y * other.width + x);
                let px = [other.data[i], other.data[i + 1], other.data[i + 2]];
                self.set(x0 + x as i64, y0 + y as i64, px);
            }
        }
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        encode_rgb_png(self.width as u32, self.height as u32, &self.data)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_png()?).map_err(|e| Error::io(path, e))
    }
}

/// Maps a position in the unit square onto terrain-canvas pixels.
pub fn world_to_terrain_px(p: [f64; 2]) -> (i64, i64) {
    let s = TERRAIN_SIZE as f64;
    let x = (p[0].clamp(0.0, 1.0) * s).min(s - 1.0) as i64;
    let y = (s - 1.0 - (p[1].clamp(0.0, 1.0) * s).min(s - 1.0)) as i64;
    (x, y)
}

/// Terrain raster overlaid with one path per entry, a white start cross and a
/// black goal cross.
pub fn render_overlay(layout: &TerrainLayout, paths: &[(Vec<[f64; 2]>, Rgb)], start: [f64; 2], goal: [f64; 2]) -> Canvas {
    let mut canvas = Canvas::from_terrain(layout);
    for (path, color) in paths {
        for w in path.windows(2) {
            canvas.line(world_to_terrain_px(w[0]), world_to_terrain_px(w[1]), 1, *color);
        }
    }
    canvas.cross(world_to_terrain_px(start), 8, WHITE);
    canvas.cross(world_to_terrain_px(goal), 8, BLACK);
    canvas
}

/// Line chart of several series on a shared axis, with light grid lines.
pub fn render_curves(series: &[(Vec<f64>, Rgb)], width: usize, height: usize) -> Canvas {
    let mut canvas = Canvas::new(width, height, WHITE);
    let margin = 20i64;
    let (w, h) = (width as i64 - 2 * margin, height as i64 - 2 * margin);
    let y_max = series
        .iter()
        .flat_map(|(s, _)| s.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let n_max = series.iter().map(|(s, _)| s.len()).max().unwrap_or(0).max(2);
    for k in 0..=4 {
        let y = margin + h - h * k / 4;
        canvas.line((margin, y), (margin + w, y), 0, GREY);
    }
    canvas.line((margin, margin), (margin, margin + h), 0, BLACK);
    canvas.line((margin, margin + h), (margin + w, margin + h), 0, BLACK);
    for (s, color) in series {
        let pt = |i: usize, v: f64| {
            let x = margin + (w as f64 * i as f64 / (n_max - 1) as f64).round() as i64;
            let y = margin + h - (h as f64 * (v / y_max).clamp(0.0, 1.0)).round() as i64;
            (x, y)
        };
        for i in 1..s.len() {
            canvas.line(pt(i - 1, s[i - 1]), pt(i, s[i]), 0, *color);
        }
    }
    canvas
}

/// Square matrix heat map with a fixed blue-white-red scale symmetric around 0.
pub fn render_matrix(values: &[Vec<f64>], cell: usize) -> Canvas {
    let n = values.len();
    let scale = values
        .iter()
        .flatten()
        .filter(|v| v.is_finite())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    let mut canvas = Canvas::new(n * cell, n * cell, WHITE);
    for (i, row) in values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let t = (v / scale).clamp(-1.0, 1.0);
            let color = if t < 0.0 {
                let k = (255.0 * (1.0 + t)) as u8;
                [k, k, 255]
            } else {
                let k = (255.0 * (1.0 - t)) as u8;
                [255, k, k]
            };
            canvas.fill_rect(
                (j * cell) as i64 + 1,
                (i * cell) as i64 + 1,
                ((j + 1) * cell) as i64 - 1,
                ((i + 1) * cell) as i64 - 1,
                color,
            );
        }
    }
    canvas
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let data: Vec<u8> = (0..5 * 3 * 3).map(|i| i as u8).collect();
        let bytes = encode_rgb_png(5, 3, &data).unwrap();
        let (w, h, back) = decode_rgb_png(std::io::Cursor::new(bytes), 16).unwrap();
        assert_eq!((w, h), (5, 3));
        assert_eq!(back, data);
    }

    #[test]
    fn decode_rejects_oversized_and_garbage() {
        let bytes = encode_rgb_png(20, 20, &[7u8; 1200]).unwrap();
        assert!(decode_rgb_png(std::io::Cursor::new(bytes), 10).is_err());
        assert!(decode_rgb_png(std::io::Cursor::new(b"not a png".to_vec()), 10).is_err());
    }

    #[test]
    fn overlay_is_deterministic() {
        let layout = TerrainLayout::uniform([100, 150, 200]);
        let path = vec![[0.1, 0.1], [0.5, 0.4], [0.9, 0.9]];
        let a = render_overlay(&layout, &[(path.clone(), VARIANT_COLORS[3])], [0.1, 0.1], [0.9, 0.9]);
        let b = render_overlay(&layout, &[(path, VARIANT_COLORS[3])], [0.1, 0.1], [0.9, 0.9]);
        assert_eq!(a.to_png().unwrap(), b.to_png().unwrap());
    }
}
