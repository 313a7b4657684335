//! Building blocks for training a small image classifier with the
//! "strong augmentation + auxiliary metric loss + TTA ensembling" recipe.
//!
//! The crate is organised by stage of the pipeline:
//!
//! * [`image`] and [`imageops`]: raster types, resampling, PPM IO and the
//!   five-step training augmentation (random resized crop, flip,
//!   AutoAugment, normalization, CutMix).
//! * [`losses`]: label-smoothed cross-entropy, batch-hard triplet and
//!   ArcFace, each with hand-derived gradients.
//! * [`optim`]: SGD with momentum and coupled weight decay, and the
//!   warmup + cosine learning-rate schedule.
//! * [`model`]: a compact convolutional backbone with explicit backprop and
//!   a versioned checkpoint format.
//! * [`inference`]: test-time view generation, probability fusion, top-1.
//! * [`gradcheck`]: finite-difference audits for every analytic gradient.

pub mod error;
pub mod gradcheck;
pub mod image;
pub mod imageops;
pub mod inference;
pub mod losses;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use image::{Image, ImageF32, ImageU8};
pub use matrix::Matrix;
pub use rng::RngStream;
