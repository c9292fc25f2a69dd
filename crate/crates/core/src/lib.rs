//! Single-pixel imaging with uncertainty estimation.
//!
//! The crate covers the numerical side of the pipeline:
//!
//! * [`patterns`]: Sylvester–Hadamard bases, a nested coarse-to-fine 2-D pattern
//!   ordering and the measurement operator built from it.
//! * [`sensing`]: the forward model `y = A·vec(x)` and additive white Gaussian noise.
//! * [`recon`]: an LSQR solver producing the initial image estimate.
//! * [`bcnn`]: a dropout U-Net trained under Laplacian, Gaussian or Bernoulli
//!   likelihoods, with Monte Carlo dropout prediction and data/model uncertainty
//!   decomposition.
//! * [`metrics`]: MAE, SSIM and the error/uncertainty R².
//! * [`datasets`]: MNIST IDX and STL-10 binary parsing, resizing and seeded splits.
//!
//! Everything here is `no_std` + `alloc` when the default `std` feature is disabled.
//! File IO, configuration and the command line live in the companion `spi` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod bcnn;
pub mod datasets;
mod error;
mod image;
pub mod metrics;
pub mod patterns;
pub mod recon;
pub mod seed;
pub mod sensing;

pub use error::{Error, Result};
pub use image::Image;
