//! Digit sprites: IDX images or a bundled procedural set.

use super::idx::{parse_idx, IdxImages};
use crate::error::{Error, Result};

pub const GLYPH_SIZE: usize = 28;

/// Square u8 sprites of a common side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Glyphs {
    pub size: usize,
    pub images: Vec<Vec<u8>>,
}

// Seven-segment endpoints on a 28x28 canvas: (x0, y0, x1, y1).
const SEGMENTS: [[f64; 4]; 7] = [
    [9.0, 5.0, 19.0, 5.0],   // top
    [19.0, 5.0, 19.0, 14.0], // upper right
    [19.0, 14.0, 19.0, 23.0],
    [9.0, 23.0, 19.0, 23.0], // bottom
    [9.0, 14.0, 9.0, 23.0],
    [9.0, 5.0, 9.0, 14.0], // upper left
    [9.0, 14.0, 19.0, 14.0],
];

const DIGITS: [&[usize]; 10] = [
    &[0, 1, 2, 3, 4, 5],
    &[1, 2],
    &[0, 1, 6, 4, 3],
    &[0, 1, 6, 2, 3],
    &[5, 6, 1, 2],
    &[0, 5, 6, 2, 3],
    &[0, 5, 4, 3, 2, 6],
    &[0, 1, 2],
    &[0, 1, 2, 3, 4, 5, 6],
    &[0, 1, 2, 3, 5, 6],
];

fn segment_distance(px: f64, py: f64, s: &[f64; 4]) -> f64 {
    let (dx, dy) = (s[2] - s[0], s[3] - s[1]);
    let t = (((px - s[0]) * dx + (py - s[1]) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    ((px - s[0] - t * dx).powi(2) + (py - s[1] - t * dy).powi(2)).sqrt()
}

fn procedural_digit(d: usize) -> Vec<u8> {
    // A slight slant makes the sprites less blocky.
    let slant = 0.12;
    let mut img = vec![0u8; GLYPH_SIZE * GLYPH_SIZE];
    for y in 0..GLYPH_SIZE {
        for x in 0..GLYPH_SIZE {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5 + slant * (y as f64 - 14.0));
            let dist = DIGITS[d].iter().map(|&s| segment_distance(px, py, &SEGMENTS[s])).fold(f64::INFINITY, f64::min);
            let v = (2.6 - dist).clamp(0.0, 1.0);
            img[y * GLYPH_SIZE + x] = (v * 255.0).round() as u8;
        }
    }
    img
}

impl Glyphs {
    /// Ten digit-like 28x28 sprites, no download required.
    pub fn procedural() -> Self {
        Self { size: GLYPH_SIZE, images: (0..10).map(procedural_digit).collect() }
    }

    pub fn from_idx(images: &IdxImages) -> Result<Self> {
        if images.rows != images.cols || images.count == 0 {
            return Err(Error::Config(format!("need square glyphs, got {}x{}x{}", images.count, images.rows, images.cols)));
        }
        Ok(Self { size: images.rows, images: (0..images.count).map(|i| images.image(i).to_vec()).collect() })
    }

    pub fn load_idx(path: &std::path::Path) -> Result<Self> {
        Self::from_idx(&parse_idx(&std::fs::read(path)?)?)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Resampled to side `side`: box averaging when shrinking, nearest when growing.
    pub fn resized(&self, side: usize) -> Self {
        if side == self.size {
            return self.clone();
        }
        let s = self.size;
        let images = self
            .images
            .iter()
            .map(|img| {
                if side < s {
                    let mut sum = vec![0u32; side * side];
                    let mut cnt = vec![0u32; side * side];
                    for y in 0..s {
                        for x in 0..s {
                            let o = (y * side / s) * side + x * side / s;
                            sum[o] += img[y * s + x] as u32;
                            cnt[o] += 1;
                        }
                    }
                    sum.iter().zip(&cnt).map(|(&a, &c)| ((a + c / 2) / c) as u8).collect()
                } else {
                    (0..side * side).map(|o| img[(o / side * s / side) * s + (o % side) * s / side]).collect()
                }
            })
            .collect();
        Self { size: side, images }
    }
}
