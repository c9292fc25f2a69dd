//! File formats, experiment configuration and the end-to-end runner for
//! simulated single-pixel imaging with Bayesian reconstruction networks.
//!
//! The numerical work lives in [`spi_core`]; this crate reads datasets from
//! disk, writes artifacts and drives experiment grids.

pub mod config;
pub mod container;
mod error;
pub mod files;
pub mod manifest;
pub mod pgm;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};
