//! PsGAN: photorealistic text replacement in scene images.
//!
//! A small, self-contained stack: dense f32 autodiff tensors, the masked
//! normalization layers the generator is built from, a Pix2Pix-style
//! training loop, a synthetic data pipeline, and recognition metrics.

pub mod checkpoint;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod mask;
pub mod metrics;
pub mod norm;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
