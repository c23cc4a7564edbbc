//! Shared fixtures and independent reference implementations for the
//! integration tests. The oracles here are written from the textbook
//! definitions and deliberately share no code with the library.

#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::Path;

use biorec::image::GrayImage;
use biorec::mlp::{MlpModel, Network};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> GrayImage {
    GrayImage::from_fn(h, w, |_, _| rng.random::<f64>())
}

/// Pixels on the 1/256 lattice, so shifts by lattice values are exact.
pub fn dyadic_image(rng: &mut impl Rng, h: usize, w: usize) -> GrayImage {
    GrayImage::from_fn(h, w, |_, _| f64::from(rng.random_range(0u32..256)) / 256.0)
}

// ---------------------------------------------------------------- LBP

fn bilinear(img: &GrayImage, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (fy, fx) = (y - y.floor(), x - x.floor());
    let px = |yy: usize, xx: usize| {
        if yy < img.height() && xx < img.width() {
            img.get(yy, xx)
        } else {
            0.0
        }
    };
    px(y0, x0) * (1.0 - fy) * (1.0 - fx)
        + px(y0, x0 + 1) * (1.0 - fy) * fx
        + px(y0 + 1, x0) * fy * (1.0 - fx)
        + px(y0 + 1, x0 + 1) * fy * fx
}

/// Circular neighbour `p` of `P`, counterclockwise from the +x axis with
/// rows growing downward.
fn neighbour(img: &GrayImage, y: usize, x: usize, p: u32, points: u32, radius: f64) -> f64 {
    let t = 2.0 * PI * f64::from(p) / f64::from(points);
    let (dy, dx) = (-radius * t.sin(), radius * t.cos());
    let (ry, rx) = (dy.round(), dx.round());
    if (dy - ry).abs() < 1e-9 && (dx - rx).abs() < 1e-9 {
        img.get((y as f64 + ry) as usize, (x as f64 + rx) as usize)
    } else {
        bilinear(img, y as f64 + dy, x as f64 + dx)
    }
}

pub fn oracle_lbp_code(img: &GrayImage, y: usize, x: usize, points: u32, radius: u32) -> u32 {
    let c = img.get(y, x);
    (0..points)
        .filter(|&p| neighbour(img, y, x, p, points, f64::from(radius)) >= c)
        .map(|p| 1u32 << p)
        .sum()
}

fn circular_transitions(code: u32, points: u32) -> u32 {
    (0..points)
        .filter(|&p| ((code >> p) & 1) != ((code >> ((p + 1) % points)) & 1))
        .count() as u32
}

/// Histogram bin of `code`: rank among uniform codes, or the last bin.
pub fn oracle_uniform_bin(code: u32, points: u32) -> usize {
    let uniform: Vec<u32> = (0..1u32 << points)
        .filter(|&c| circular_transitions(c, points) <= 2)
        .collect();
    match uniform.binary_search(&code) {
        Ok(i) => i,
        Err(_) => uniform.len(),
    }
}

/// Block-wise uniform LBP histogram by brute force.
pub fn oracle_lbp(img: &GrayImage, points: u32, radius: u32, grid: (usize, usize)) -> Vec<f64> {
    let r = radius as usize;
    let (ih, iw) = (img.height() - 2 * r, img.width() - 2 * r);
    let bins = (points * (points - 1) + 3) as usize;
    let block = |i: usize, len: usize, parts: usize| (i / (len / parts)).min(parts - 1);
    let mut hist = vec![0.0; grid.0 * grid.1 * bins];
    for y in r..img.height() - r {
        for x in r..img.width() - r {
            let code = oracle_lbp_code(img, y, x, points, radius);
            let b = block(y - r, ih, grid.0) * grid.1 + block(x - r, iw, grid.1);
            hist[b * bins + oracle_uniform_bin(code, points)] += 1.0;
        }
    }
    hist
}

// ---------------------------------------------------------------- HOG

/// How a gradient's magnitude is split between orientation bins. Both
/// forms give the two nearest centres linear weights; they differ only in
/// how the weight is rounded.
#[allow(dead_code)]
#[derive(Clone, Copy, Debug)]
pub enum Votes {
    /// `1 - distance / 20` against every centre in turn.
    Triangular,
    /// Fractional position between the neighbouring centres.
    Interpolated,
}

/// HOG with 9 unsigned bins centred at 10, 30, ..., 170 degrees, linear
/// votes to the two nearest centres, 2x2-cell blocks at stride one,
/// L2 normalisation with epsilon 1e-6.
pub fn oracle_hog(img: &GrayImage, cell: (usize, usize)) -> Vec<f64> {
    oracle_hog_with(img, cell, Votes::Triangular)
}

pub fn oracle_hog_with(img: &GrayImage, cell: (usize, usize), votes: Votes) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let (ny, nx) = (h / cell.0, w / cell.1);
    let px = |y: isize, x: isize| img.get(y.clamp(0, h as isize - 1) as usize, x.clamp(0, w as isize - 1) as usize);
    let mut hist = vec![vec![[0.0f64; 9]; nx]; ny];
    for y in 0..ny * cell.0 {
        for x in 0..nx * cell.1 {
            let (yi, xi) = (y as isize, x as isize);
            let gx = px(yi, xi + 1) - px(yi, xi - 1);
            let gy = px(yi + 1, xi) - px(yi - 1, xi);
            let mag = (gx * gx + gy * gy).sqrt();
            let mut ang = gy.atan2(gx).to_degrees();
            if ang < 0.0 {
                ang += 180.0;
            }
            if ang >= 180.0 {
                ang -= 180.0;
            }
            let bins = &mut hist[y / cell.0][x / cell.1];
            match votes {
                Votes::Triangular => {
                    for (b, slot) in bins.iter_mut().enumerate() {
                        let centre = 10.0 + 20.0 * b as f64;
                        let mut d = (ang - centre).abs();
                        d = d.min(180.0 - d);
                        let wgt = 1.0 - d / 20.0;
                        if wgt > 0.0 {
                            *slot += mag * wgt;
                        }
                    }
                }
                Votes::Interpolated => {
                    let pos = ang / 20.0 - 0.5;
                    let below = pos.floor();
                    let frac = pos - below;
                    let lo = (below as i64).rem_euclid(9) as usize;
                    bins[lo] += mag * (1.0 - frac);
                    bins[(lo + 1) % 9] += mag * frac;
                }
            }
        }
    }
    let mut out = Vec::new();
    for by in 0..ny - 1 {
        for bx in 0..nx - 1 {
            let mut v = Vec::with_capacity(36);
            for (cy, cx) in [(by, bx), (by, bx + 1), (by + 1, bx), (by + 1, bx + 1)] {
                v.extend_from_slice(&hist[cy][cx]);
            }
            let n = (v.iter().map(|a| a * a).sum::<f64>() + 1e-6 * 1e-6).sqrt();
            out.extend(v.iter().map(|a| a / n));
        }
    }
    out
}

// ---------------------------------------------------------------- MLP

/// Mean cross-entropy of a tanh/softmax network, computed sample by sample.
pub fn oracle_loss(net: &Network, x: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (s, &y) in labels.iter().enumerate() {
        let hidden: Vec<f64> = (0..net.n_hidden())
            .map(|h| {
                let a: f64 = (0..net.n_in()).map(|i| net.w1(h, i) * x[(s, i)]).sum();
                (a + net.b1(h)).tanh()
            })
            .collect();
        let z: Vec<f64> = (0..net.n_out())
            .map(|c| net.b2(c) + hidden.iter().enumerate().map(|(h, v)| net.w2(c, h) * v).sum::<f64>())
            .collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[y];
    }
    total / labels.len() as f64
}

/// Central finite-difference gradient of [`oracle_loss`].
pub fn numeric_gradient(model: &MlpModel, x: &DMatrix<f64>, labels: &[usize], step: f64) -> Vec<f64> {
    let base = &model.network;
    (0..base.param_count())
        .map(|k| {
            let mut plus = base.clone();
            plus.params_mut()[k] += step;
            let mut minus = base.clone();
            minus.params_mut()[k] -= step;
            (oracle_loss(&plus, x, labels) - oracle_loss(&minus, x, labels)) / (2.0 * step)
        })
        .collect()
}

// ---------------------------------------------------------------- ROC

/// AUC as the Mann-Whitney statistic: the fraction of (positive, negative)
/// pairs ranked correctly, ties counting one half.
pub fn mann_whitney_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if positive[i] && !positive[j] {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

// ---------------------------------------------------------------- fixtures

/// Writes `root/<category>/<n>.png`: category `c` is a grating whose
/// orientation and frequency depend on `c`, plus mild per-image noise.
pub fn write_toy_dataset(root: &Path, categories: usize, per_category: usize, size: usize, seed: u64) {
    let mut r = rng(seed);
    for c in 0..categories {
        let dir = root.join(format!("class_{c}"));
        std::fs::create_dir_all(&dir).unwrap();
        let angle = PI * c as f64 / categories as f64;
        let freq = 0.35 + 0.15 * c as f64;
        for n in 0..per_category {
            let phase = r.random::<f64>() * 2.0 * PI;
            let img = image::GrayImage::from_fn(size as u32, size as u32, |x, y| {
                let t = (x as f64 * angle.cos() + y as f64 * angle.sin()) * freq + phase;
                let v = 0.5 + 0.35 * t.sin() + 0.08 * (r.random::<f64>() - 0.5);
                image::Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
            });
            img.save(dir.join(format!("{n:02}.png"))).unwrap();
        }
    }
}
