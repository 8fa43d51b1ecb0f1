//! Single-image generative test-time augmentation for few-shot classification.
//!
//! The pipeline runs on a synthetic Gaussian-mixture image world whose noise
//! predictor is exact, so every stage can be checked against an oracle:
//!
//! * [`diffusion`]: variance-preserving schedule, forward kernel, reverse update.
//! * [`geometry`]: sampled shape tweaks (flip, stretch, rotate, translate, perspective).
//! * [`conditioning`]: cross-attention algebra and the image-conditioned predictor.
//! * [`augment`]: the tweak, noise, denoise operator and augmented view sets.
//! * [`fsl`]: the synthetic world, episodes, prototypes and the benchmark harness.
//! * [`theory`]: executable checks of the risk decomposition, margin bound and radius claims.
//! * [`cli`]: configuration, commands and file formats.

pub mod augment;
pub mod cli;
pub mod conditioning;
pub mod diffusion;
pub mod error;
pub mod fsl;
pub mod geometry;
pub mod image;
pub mod rng;
pub mod theory;
pub mod world;

pub use error::{Error, Result};
pub use image::RasterImage;
