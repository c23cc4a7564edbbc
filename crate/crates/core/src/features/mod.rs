//! Feature channels: raw pixels, uniform LBP, and HOG.

pub mod hog;
pub mod lbp;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::GrayImage;
use crate::preprocess::vectorize;

pub use hog::{hog_descriptor, HogConfig};
pub use lbp::{lbp_code, lbp_descriptor, LbpConfig};

/// One of the three parallel feature streams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Channel {
    /// Vectorized pixels.
    Raw,
    Lbp(LbpConfig),
    Hog(HogConfig),
}

impl Channel {
    pub fn name(&self) -> &'static str {
        match self {
            Channel::Raw => "raw",
            Channel::Lbp(_) => "lbp",
            Channel::Hog(_) => "hog",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Channel::Raw => Ok(()),
            Channel::Lbp(c) => c.validate(),
            Channel::Hog(c) => c.validate(),
        }
    }

    pub fn extract(&self, image: &GrayImage) -> Result<Vec<f64>> {
        match self {
            Channel::Raw => Ok(vectorize(image)),
            Channel::Lbp(c) => lbp_descriptor(image, c),
            Channel::Hog(c) => hog_descriptor(image, c),
        }
    }

    /// Feature matrix with one row per image.
    pub fn extract_matrix(&self, images: &[GrayImage]) -> Result<DMatrix<f64>> {
        let table = match self {
            Channel::Lbp(c) => Some(lbp::uniform_bin_table(c.points)),
            _ => None,
        };
        let rows: Vec<Vec<f64>> = images
            .par_iter()
            .map(|im| match (self, &table) {
                (Channel::Lbp(c), Some(t)) => lbp::lbp_descriptor_with_table(im, c, t),
                _ => self.extract(im),
            })
            .collect::<Result<_>>()?;
        let d = rows.first().map_or(0, Vec::len);
        Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }
}
