//! Bayesian (dropout) U-Net for image reconstruction with uncertainty.
//!
//! Each output pixel parameterizes a distribution: a mean `μ` (logistic head) and,
//! for the Laplacian and Gaussian likelihoods, a scale `σ` (softplus head plus a
//! floor). Training minimizes the negative log-likelihood plus an L2 penalty;
//! prediction runs the network `K` times with dropout active and splits the
//! predictive variance into a data part (mean of the per-sample variances) and a
//! model part (variance of the per-sample means).

use alloc::format;
use alloc::string::String;

use crate::{Error, Image, Result};

pub mod checkpoint;
mod layers;
mod loss;
mod network;
mod predict;
mod real;
mod train;

pub use loss::{head_loss, l2_penalty, nll_loss, total_loss};
pub use network::{
    forward, init_network, Architecture, ConvSpec, Gradients, NetworkWeights, Tensor,
};
pub use predict::{decompose, predict_mc, PredictionResult};
pub use real::Real;
pub use train::{
    evaluate_loss, train, AdamConfig, EpochRecord, History, LrSchedule, TrainError, TrainOutcome, TrainingConfig,
};

#[doc(hidden)]
pub use layers::{col2im, dropout_mask, im2col};

/// Per-pixel output distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Likelihood {
    Laplacian,
    Gaussian,
    Bernoulli,
}

impl Likelihood {
    pub const ALL: [Likelihood; 3] = [Likelihood::Laplacian, Likelihood::Gaussian, Likelihood::Bernoulli];

    /// Output channels: `μ` only for Bernoulli, `(μ, σ)` otherwise.
    pub fn channels(self) -> usize {
        match self {
            Likelihood::Bernoulli => 1,
            Likelihood::Laplacian | Likelihood::Gaussian => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Likelihood::Laplacian => "laplacian",
            Likelihood::Gaussian => "gaussian",
            Likelihood::Bernoulli => "bernoulli",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "laplacian" => Ok(Likelihood::Laplacian),
            "gaussian" => Ok(Likelihood::Gaussian),
            "bernoulli" => Ok(Likelihood::Bernoulli),
            other => Err(Error::Config(format!("unknown likelihood `{other}`"))),
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Likelihood::Laplacian => 0,
            Likelihood::Gaussian => 1,
            Likelihood::Bernoulli => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Likelihood::Laplacian),
            1 => Some(Likelihood::Gaussian),
            2 => Some(Likelihood::Bernoulli),
            _ => None,
        }
    }
}

/// Reduction of the per-pixel Bernoulli loss. `Sum` follows the loss as usually
/// written for this model; `Mean` divides by the pixel count like the other two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BernoulliReduction {
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkConfig {
    /// Encoder depth (number of 2×2 poolings).
    pub levels: usize,
    /// Channel width of the first encoder level; doubles per level.
    pub base_channels: usize,
    pub dropout_rate: f64,
    pub l2_factor: f64,
    pub likelihood: Likelihood,
    /// Added to the softplus σ head.
    pub sigma_floor: f64,
    /// `μ` is clamped to `[ε, 1 − ε]` inside the Bernoulli logarithms.
    pub bernoulli_clamp: f64,
    pub bernoulli_reduction: BernoulliReduction,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            base_channels: 32,
            dropout_rate: 0.1,
            l2_factor: 1e-6,
            likelihood: Likelihood::Bernoulli,
            sigma_floor: 1e-3,
            bernoulli_clamp: 1e-7,
            bernoulli_reduction: BernoulliReduction::Sum,
        }
    }
}

impl NetworkConfig {
    pub fn with_likelihood(self, likelihood: Likelihood) -> Self {
        Self { likelihood, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.base_channels == 0 {
            return fail("base_channels must be positive".into());
        }
        if self.levels > 8 {
            return fail(format!("{} levels is too deep", self.levels));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.l2_factor >= 0.0) || !self.l2_factor.is_finite() {
            return fail(format!("l2 factor {} must be >= 0", self.l2_factor));
        }
        if !(self.sigma_floor > 0.0) || !self.sigma_floor.is_finite() {
            return fail(format!("sigma floor {} must be > 0", self.sigma_floor));
        }
        if !(self.bernoulli_clamp > 0.0 && self.bernoulli_clamp < 0.5) {
            return fail(format!("Bernoulli clamp {} outside (0, 0.5)", self.bernoulli_clamp));
        }
        Ok(())
    }
}

/// Distribution parameters for every pixel of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMaps {
    pub mu: Image,
    /// Scale map; `None` for the Bernoulli likelihood.
    pub sigma: Option<Image>,
}
