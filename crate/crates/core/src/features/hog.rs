//! Dense histogram of oriented gradients with 2x2-cell blocks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

pub const BINS: usize = 9;
pub const BLOCK_CELLS: usize = 2;
pub const BLOCK_EPS: f64 = 1e-6;
const BIN_WIDTH: f64 = 180.0 / BINS as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HogConfig {
    /// Cell size in pixels as (rows, columns).
    pub cell: (usize, usize),
}

impl HogConfig {
    pub const FACES: HogConfig = HogConfig { cell: (8, 8) };
    pub const OBJECTS: HogConfig = HogConfig { cell: (16, 16) };

    pub fn validate(&self) -> Result<()> {
        if self.cell.0 < 2 || self.cell.1 < 2 {
            return Err(Error::Config(format!(
                "HOG cell must be at least 2x2, got {}x{}",
                self.cell.0, self.cell.1
            )));
        }
        Ok(())
    }

    pub fn cells(&self, height: usize, width: usize) -> (usize, usize) {
        (height / self.cell.0, width / self.cell.1)
    }

    pub fn descriptor_len(&self, height: usize, width: usize) -> usize {
        let (ny, nx) = self.cells(height, width);
        if ny < BLOCK_CELLS || nx < BLOCK_CELLS {
            return 0;
        }
        (ny - 1) * (nx - 1) * BLOCK_CELLS * BLOCK_CELLS * BINS
    }
}

impl Default for HogConfig {
    fn default() -> Self {
        Self::FACES
    }
}

/// Centered-difference gradient with replicated borders, as
/// (magnitude, unsigned orientation in degrees within [0, 180)).
#[inline]
pub fn gradient(image: &GrayImage, y: usize, x: usize) -> (f64, f64) {
    let (yi, xi) = (y as isize, x as isize);
    let gx = image.get_clamped(yi, xi + 1) - image.get_clamped(yi, xi - 1);
    let gy = image.get_clamped(yi + 1, xi) - image.get_clamped(yi - 1, xi);
    let magnitude = (gx * gx + gy * gy).sqrt();
    let mut angle = gy.atan2(gx).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    if angle >= 180.0 {
        angle -= 180.0;
    }
    (magnitude, angle)
}

/// Two orientation bins sharing a vote and the weight of the second:
/// bin centres sit at 10, 30, ..., 170 degrees and wrap around 180.
#[inline]
pub fn orientation_bins(angle: f64) -> (usize, usize, f64) {
    let pos = angle / BIN_WIDTH - 0.5;
    let lower = pos.floor();
    let frac = pos - lower;
    let lo = (lower as isize).rem_euclid(BINS as isize) as usize;
    (lo, (lo + 1) % BINS, frac)
}

/// Dalal-Triggs style HOG: 9 unsigned bins, 2x2-cell blocks at one-cell
/// stride, each block L2-normalized as `v / sqrt(|v|^2 + eps^2)`.
pub fn hog_descriptor(image: &GrayImage, cfg: &HogConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let (cy, cx) = cfg.cell;
    if image.height() < BLOCK_CELLS * cy || image.width() < BLOCK_CELLS * cx {
        return Err(Error::InvalidArgument(format!(
            "{}x{} image is smaller than one {}x{} block",
            image.height(),
            image.width(),
            BLOCK_CELLS * cy,
            BLOCK_CELLS * cx
        )));
    }
    let (ny, nx) = cfg.cells(image.height(), image.width());

    let mut cells = vec![0.0; ny * nx * BINS];
    for y in 0..ny * cy {
        let row = y / cy;
        for x in 0..nx * cx {
            let (mag, angle) = gradient(image, y, x);
            let (lo, hi, frac) = orientation_bins(angle);
            let base = (row * nx + x / cx) * BINS;
            cells[base + lo] += mag * (1.0 - frac);
            cells[base + hi] += mag * frac;
        }
    }

    let mut out = Vec::with_capacity(cfg.descriptor_len(image.height(), image.width()));
    let mut block = [0.0; BLOCK_CELLS * BLOCK_CELLS * BINS];
    for by in 0..ny - 1 {
        for bx in 0..nx - 1 {
            let mut k = 0;
            for dy in 0..BLOCK_CELLS {
                for dx in 0..BLOCK_CELLS {
                    let base = ((by + dy) * nx + bx + dx) * BINS;
                    block[k..k + BINS].copy_from_slice(&cells[base..base + BINS]);
                    k += BINS;
                }
            }
            let norm_sq: f64 = block.iter().map(|v| v * v).sum();
            let denom = (norm_sq + BLOCK_EPS * BLOCK_EPS).sqrt();
            out.extend(block.iter().map(|v| v / denom));
        }
    }
    Ok(out)
}
