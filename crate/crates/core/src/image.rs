//! Dense grayscale image with `f64` intensities, stored row-major.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimensionMismatch {
                expected: height * width,
                got: data.len(),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    /// Builds an image from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == width), "ragged rows");
        Self {
            height,
            width,
            data: rows.concat(),
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel with coordinates clamped to the image border.
    #[inline]
    pub fn get_clamped(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.get(y, x)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Bilinear resampling with pixel-center alignment.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let max_y = (self.height - 1) as f64;
        let max_x = (self.width - 1) as f64;
        Self::from_fn(height, width, |y, x| {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
            let y0 = fy.floor() as usize;
            let x0 = fx.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let x1 = (x0 + 1).min(self.width - 1);
            let ty = fy - y0 as f64;
            let tx = fx - x0 as f64;
            let top = self.get(y0, x0) * (1.0 - tx) + self.get(y0, x1) * tx;
            let bottom = self.get(y1, x0) * (1.0 - tx) + self.get(y1, x1) * tx;
            top * (1.0 - ty) + bottom * ty
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_preserves_constant_images() {
        let img = GrayImage::filled(112, 92, 0.25);
        let out = img.resize_bilinear(96, 96);
        assert_eq!((out.height(), out.width()), (96, 96));
        assert!(out.pixels().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn resize_identity_is_noop() {
        let img = GrayImage::from_fn(5, 4, |y, x| (y * 4 + x) as f64);
        assert_eq!(img.resize_bilinear(5, 4), img);
    }

    #[test]
    fn upsample_interpolates_linearly() {
        let img = GrayImage::from_rows(&[vec![0.0, 1.0]]);
        let out = img.resize_bilinear(1, 4);
        // centres at 0.25-scale source positions -0.25, 0.25, 0.75, 1.25
        assert_eq!(out.pixels(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn new_rejects_wrong_length() {
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
    }
}
