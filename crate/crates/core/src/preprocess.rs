//! Per-image normalization and vectorization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Variance floor for degenerate images.
pub const STD_EPS: f64 = 1e-12;

pub const DEFAULT_LN_WINDOW: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Normalization {
    None,
    /// Zero mean, unit variance per image.
    #[default]
    Sn,
    /// Local contrast normalization over a square window.
    Ln {
        ln_window: usize,
    },
}

impl Normalization {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Normalization::Ln { ln_window } if ln_window < 3 || ln_window % 2 == 0 => Err(Error::Config(format!(
                "ln_window must be odd and >= 3, got {ln_window}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn apply(&self, image: &GrayImage) -> GrayImage {
        match *self {
            Normalization::None => image.clone(),
            Normalization::Sn => per_image_standardize(image),
            Normalization::Ln { ln_window } => luminous_normalize(image, ln_window),
        }
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Zero mean and unit population standard deviation over all pixels.
/// Images with std below [`STD_EPS`] become all-zero.
pub fn per_image_standardize(image: &GrayImage) -> GrayImage {
    let (mean, std) = mean_std(image.pixels());
    if std < STD_EPS {
        return image.map(|_| 0.0);
    }
    image.map(|v| (v - mean) / std)
}

/// Mirror an index into `[0, n)` without repeating the edge sample
/// (`-1 -> 1`, `n -> n - 2`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Local contrast normalization: each pixel becomes
/// `(p - local_mean) / (local_std + eps)` over its `window x window`
/// reflect-padded neighbourhood, and the result is min-max rescaled to [0, 1].
/// A flat result maps to all zeros.
pub fn luminous_normalize(image: &GrayImage, window: usize) -> GrayImage {
    assert!(window % 2 == 1, "window must be odd");
    let (h, w) = (image.height(), image.width());
    let half = (window / 2) as isize;
    let count = (window * window) as f64;
    let mut out = GrayImage::filled(h, w, 0.0);
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for dy in -half..=half {
                let yy = reflect(y as isize + dy, h);
                for dx in -half..=half {
                    let v = image.get(yy, reflect(x as isize + dx, w));
                    sum += v;
                    sum_sq += v * v;
                }
            }
            let mean = sum / count;
            let var = (sum_sq / count - mean * mean).max(0.0);
            out.set(y, x, (image.get(y, x) - mean) / (var.sqrt() + STD_EPS));
        }
    }
    let (lo, hi) = out
        .pixels()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    if span < STD_EPS {
        return out.map(|_| 0.0);
    }
    out.map(|v| ((v - lo) / span).clamp(0.0, 1.0))
}

/// Column-major flattening (columns concatenated top to bottom).
pub fn vectorize(image: &GrayImage) -> Vec<f64> {
    let (h, w) = (image.height(), image.width());
    let mut out = Vec::with_capacity(h * w);
    for x in 0..w {
        for y in 0..h {
            out.push(image.get(y, x));
        }
    }
    out
}

/// Inverse of [`vectorize`].
pub fn unvectorize(v: &[f64], height: usize, width: usize) -> Result<GrayImage> {
    if v.len() != height * width {
        return Err(Error::DimensionMismatch {
            expected: height * width,
            got: v.len(),
        });
    }
    Ok(GrayImage::from_fn(height, width, |y, x| v[x * height + y]))
}
