//! Attribute-guided face-to-sketch translation with a weight-shared W-net GAN.
//!
//! The generator is a W-net: an encoder-decoder (`GeneratorA`) that adds a
//! visual attribute (glasses, beard, bow tie) to a face photo, chained into a
//! U-net (`GeneratorS`) that renders the attributed photo as a sketch. The
//! decoder kernels of the first generator are shared with the encoder of the
//! second, so the pair trains jointly with roughly three quarters of the
//! parameters of two independent generators. Two discriminators drive the
//! adversarial game: a residual one that judges attribute difference images
//! and a triplex one that judges (photo, attributed photo, sketch) triples.
//!
//! The crate also ships the FLSS evaluation metric (descriptor-matching
//! similarity over SIFT-style features), SSIM, a deterministic synthetic
//! dataset for desk-scale experiments, and a CLI that ties training,
//! evaluation and sample-grid generation together.

extern crate blas_src;

pub mod cli;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
