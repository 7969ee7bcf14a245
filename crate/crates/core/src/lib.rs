//! Speckle-pair ghost imaging.
//!
//! The crate covers the whole pipeline from optics to evaluation:
//!
//! * [`optics`] simulates the two-arm pseudo-thermal ghost-imaging geometry and
//!   produces conjugate reference/test speckle pairs.
//! * [`dataset`] reads MNIST-style IDX images, derives per-sample illumination
//!   seeds and reads/writes the `YGI1` speckle-pair corpus format.
//! * [`classical`] implements Fourier-transform ghost imaging: the correlation
//!   estimate of the object's Fourier modulus, the linear sensing system and
//!   hybrid input-output phase retrieval.
//! * [`nn`] is a small reverse-mode layer engine (convolution, batch norm,
//!   pooling, upsampling, dropout, activations, BCE loss, Adam).
//! * [`ynet`] assembles the dual-encoder network, trains it and checkpoints it.
//! * [`metrics`] provides global SSIM, PSNR and method comparison reports.

pub mod classical;
pub mod dataset;
pub mod fft;
pub mod metrics;
pub mod nn;
pub mod optics;
pub mod seed;
pub mod ynet;

pub use optics::{
    ComplexField, IlluminationMode, IntensityImage, OpticalConfig, SampleImage, SpecklePair,
};
