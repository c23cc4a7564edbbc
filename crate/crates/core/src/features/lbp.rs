//! Uniform local binary patterns over a block grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Largest supported neighbour count; the code lookup table has `2^P` entries.
pub const MAX_POINTS: u32 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LbpConfig {
    /// Sampling points on the circle.
    pub points: u32,
    /// Circle radius in pixels.
    pub radius: u32,
    /// Block grid as (rows, columns).
    pub grid: (usize, usize),
}

impl LbpConfig {
    pub const FACES: LbpConfig = LbpConfig {
        points: 8,
        radius: 1,
        grid: (6, 6),
    };
    pub const OBJECTS: LbpConfig = LbpConfig {
        points: 14,
        radius: 1,
        grid: (10, 10),
    };

    pub fn validate(&self) -> Result<()> {
        if !(4..=MAX_POINTS).contains(&self.points) {
            return Err(Error::Config(format!(
                "LBP points must be in [4, {MAX_POINTS}], got {}",
                self.points
            )));
        }
        if self.radius < 1 || self.grid.0 < 1 || self.grid.1 < 1 {
            return Err(Error::Config("LBP radius and grid dimensions must be >= 1".into()));
        }
        Ok(())
    }

    /// Histogram bins per block: one per uniform pattern plus one shared bin.
    pub fn bins_per_block(&self) -> usize {
        let p = self.points as usize;
        p * (p - 1) + 3
    }

    pub fn descriptor_len(&self) -> usize {
        self.grid.0 * self.grid.1 * self.bins_per_block()
    }
}

impl Default for LbpConfig {
    fn default() -> Self {
        Self::FACES
    }
}

/// Circular 0/1 transitions in the low `points` bits of `code`.
pub fn transitions(code: u32, points: u32) -> u32 {
    let mask = if points == 32 { u32::MAX } else { (1u32 << points) - 1 };
    let rotated = ((code >> 1) | ((code & 1) << (points - 1))) & mask;
    ((code ^ rotated) & mask).count_ones()
}

pub fn is_uniform(code: u32, points: u32) -> bool {
    transitions(code, points) <= 2
}

/// Maps every code in `[0, 2^P)` to its histogram bin: uniform codes in
/// ascending order, then a single trailing bin for all others.
pub fn uniform_bin_table(points: u32) -> Vec<u16> {
    let n = 1usize << points;
    let mut table = vec![0u16; n];
    let mut next = 0u16;
    for code in 0..n as u32 {
        if is_uniform(code, points) {
            table[code as usize] = next;
            next += 1;
        }
    }
    let non_uniform = next;
    for code in 0..n as u32 {
        if !is_uniform(code, points) {
            table[code as usize] = non_uniform;
        }
    }
    table
}

/// Neighbour offsets `(dy, dx)` counterclockwise from the +x axis, with image
/// rows growing downwards. Offsets within 1e-9 of an integer are snapped.
pub fn neighbor_offsets(points: u32, radius: f64) -> Vec<(f64, f64)> {
    let snap = |v: f64| {
        let r = v.round();
        if (v - r).abs() < 1e-9 {
            r
        } else {
            v
        }
    };
    (0..points)
        .map(|p| {
            let theta = 2.0 * std::f64::consts::PI * f64::from(p) / f64::from(points);
            (snap(-radius * theta.sin()), snap(radius * theta.cos()))
        })
        .collect()
}

/// Bilinear sample at fractional coordinates; exact pixel read when both
/// coordinates are integral. Caller guarantees the 2x2 support is in bounds.
#[inline]
pub(crate) fn sample_bilinear(image: &GrayImage, y: f64, x: f64) -> f64 {
    let y0 = y.floor();
    let x0 = x.floor();
    let ty = y - y0;
    let tx = x - x0;
    let (iy, ix) = (y0 as usize, x0 as usize);
    if ty == 0.0 && tx == 0.0 {
        return image.get(iy, ix);
    }
    let at = |yy: usize, xx: usize| {
        if yy < image.height() && xx < image.width() {
            image.get(yy, xx)
        } else {
            0.0
        }
    };
    let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
    let bottom = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// LBP code at `(y, x)`: bit `p` is set when the neighbour at angle
/// `2*pi*p/P` is at least the centre value.
pub fn lbp_code(image: &GrayImage, y: usize, x: usize, points: u32, radius: u32) -> Result<u32> {
    if !(1..=MAX_POINTS).contains(&points) {
        return Err(Error::InvalidArgument(format!("points must be in [1, {MAX_POINTS}]")));
    }
    let r = radius as usize;
    if y < r || x < r || y + r >= image.height() || x + r >= image.width() {
        return Err(Error::InvalidArgument(format!(
            "({y}, {x}) has no full radius-{radius} neighbourhood in a {}x{} image",
            image.height(),
            image.width()
        )));
    }
    let offsets = neighbor_offsets(points, f64::from(radius));
    Ok(code_at(image, y, x, &offsets))
}

#[inline]
fn code_at(image: &GrayImage, y: usize, x: usize, offsets: &[(f64, f64)]) -> u32 {
    let center = image.get(y, x);
    let mut code = 0u32;
    for (p, &(dy, dx)) in offsets.iter().enumerate() {
        if sample_bilinear(image, y as f64 + dy, x as f64 + dx) >= center {
            code |= 1 << p;
        }
    }
    code
}

/// Split `len` into `parts` contiguous ranges of `len / parts`, the last one
/// absorbing the remainder.
pub(crate) fn block_bounds(len: usize, parts: usize) -> Vec<(usize, usize)> {
    let size = len / parts;
    (0..parts)
        .map(|b| {
            let start = b * size;
            let end = if b + 1 == parts { len } else { start + size };
            (start, end)
        })
        .collect()
}

/// Concatenated per-block uniform-pattern histograms (blocks row-major) of
/// the interior code image.
pub fn lbp_descriptor(image: &GrayImage, cfg: &LbpConfig) -> Result<Vec<f64>> {
    let table = uniform_bin_table(cfg.points);
    lbp_descriptor_with_table(image, cfg, &table)
}

/// Same as [`lbp_descriptor`] with a precomputed [`uniform_bin_table`].
pub fn lbp_descriptor_with_table(image: &GrayImage, cfg: &LbpConfig, table: &[u16]) -> Result<Vec<f64>> {
    cfg.validate()?;
    let r = cfg.radius as usize;
    let (gy, gx) = cfg.grid;
    if image.height() < 2 * r + gy || image.width() < 2 * r + gx {
        return Err(Error::InvalidArgument(format!(
            "{}x{} image too small for radius {} and a {gy}x{gx} grid",
            image.height(),
            image.width(),
            cfg.radius
        )));
    }
    let inner_h = image.height() - 2 * r;
    let inner_w = image.width() - 2 * r;
    let offsets = neighbor_offsets(cfg.points, f64::from(cfg.radius));
    let bins = cfg.bins_per_block();

    let rows = block_bounds(inner_h, gy);
    let cols = block_bounds(inner_w, gx);
    let row_block: Vec<usize> = rows
        .iter()
        .enumerate()
        .flat_map(|(b, &(s, e))| std::iter::repeat_n(b, e - s))
        .collect();
    let col_block: Vec<usize> = cols
        .iter()
        .enumerate()
        .flat_map(|(b, &(s, e))| std::iter::repeat_n(b, e - s))
        .collect();

    let mut hist = vec![0.0; cfg.descriptor_len()];
    for iy in 0..inner_h {
        for ix in 0..inner_w {
            let code = code_at(image, iy + r, ix + r, &offsets);
            let block = row_block[iy] * gx + col_block[ix];
            hist[block * bins + table[code as usize] as usize] += 1.0;
        }
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_patch_sets_every_bit() {
        let img = GrayImage::filled(3, 3, 0.5);
        assert_eq!(lbp_code(&img, 1, 1, 8, 1).unwrap(), 255);
    }

    #[test]
    fn axis_neighbours_follow_counterclockwise_order() {
        // P=4: bit0 east, bit1 north, bit2 west, bit3 south
        let img = GrayImage::from_rows(&[vec![0.0, 9.0, 0.0], vec![1.0, 5.0, 6.0], vec![0.0, 4.0, 0.0]]);
        assert_eq!(lbp_code(&img, 1, 1, 4, 1).unwrap(), 0b0011);
    }

    #[test]
    fn alternating_neighbours_alternate_bits() {
        // axis neighbours 6 (>= 5) and diagonals interpolated from 4-valued
        // corners plus the centre; build the patch so diagonals fall below 5.
        let img = GrayImage::from_rows(&[vec![0.0, 6.0, 0.0], vec![6.0, 5.0, 6.0], vec![0.0, 6.0, 0.0]]);
        // Diagonal sample at (1 - s, 1 + s), s = sin(pi/4): bilinear over the
        // top-right 2x2 cell {6,0 / 5,6}.
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let diag = (1.0 - s) * ((1.0 - s) * 5.0 + s * 6.0) + s * ((1.0 - s) * 6.0 + s * 0.0);
        assert!(diag < 5.0);
        assert_eq!(lbp_code(&img, 1, 1, 8, 1).unwrap(), 0b0101_0101);
    }

    #[test]
    fn uniform_code_counts() {
        let count = |p: u32| (0..1u32 << p).filter(|&c| is_uniform(c, p)).count();
        assert_eq!(count(8), 58);
        assert_eq!(count(14), 14 * 13 + 2);
        for p in 4..=12u32 {
            assert_eq!(count(p), (p * (p - 1) + 2) as usize);
        }
    }

    #[test]
    fn bin_table_orders_uniform_codes_ascending() {
        let table = uniform_bin_table(8);
        assert_eq!(table[0], 0);
        assert_eq!(table[1], 1);
        assert_eq!(table[2], 2);
        assert_eq!(table[3], 3);
        assert_eq!(table[5], 58); // 00000101 has four transitions
        assert_eq!(table[255], 57);
    }

    #[test]
    fn out_of_interior_is_an_error() {
        let img = GrayImage::filled(5, 5, 0.0);
        assert!(lbp_code(&img, 0, 2, 8, 1).is_err());
        assert!(lbp_code(&img, 2, 4, 8, 1).is_err());
        assert!(lbp_code(&img, 2, 2, 8, 2).is_ok());
    }

    #[test]
    fn descriptor_lengths() {
        let face = GrayImage::filled(96, 96, 0.1);
        assert_eq!(lbp_descriptor(&face, &LbpConfig::FACES).unwrap().len(), 2124);
        let object = GrayImage::filled(192, 192, 0.1);
        assert_eq!(lbp_descriptor(&object, &LbpConfig::OBJECTS).unwrap().len(), 18500);
    }

    #[test]
    fn block_mass_equals_block_pixels() {
        let img = GrayImage::from_fn(20, 17, |y, x| ((y * 31 + x * 17) % 13) as f64 / 13.0);
        let cfg = LbpConfig {
            points: 8,
            radius: 1,
            grid: (3, 4),
        };
        let d = lbp_descriptor(&img, &cfg).unwrap();
        let rows = block_bounds(18, 3);
        let cols = block_bounds(15, 4);
        for (by, &(ys, ye)) in rows.iter().enumerate() {
            for (bx, &(xs, xe)) in cols.iter().enumerate() {
                let b = by * 4 + bx;
                let mass: f64 = d[b * 59..(b + 1) * 59].iter().sum();
                assert_eq!(mass, ((ye - ys) * (xe - xs)) as f64);
            }
        }
    }

    #[test]
    fn too_small_image_is_rejected() {
        let img = GrayImage::filled(7, 7, 0.0);
        assert!(lbp_descriptor(&img, &LbpConfig::FACES).is_err());
    }
}
