//! Three-channel face and object recognition: raw pixels, uniform LBP and
//! HOG features, each reduced by PCA and classified by a one-hidden-layer
//! perceptron trained with scaled conjugate gradient, then fused at the
//! decision level.

pub mod bundle;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod fusion;
pub mod image;
pub mod mlp;
pub mod modelsearch;
pub mod pca;
pub mod pipeline;
pub mod preprocess;
pub mod scg;
pub mod seed;

pub use error::{Error, Result};
