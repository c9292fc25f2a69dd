//! Monte Carlo dropout prediction and uncertainty decomposition.

use alloc::vec::Vec;

use super::network::NetworkWeights;
use super::real::Real;
use super::{Likelihood, PredictionMaps};
use crate::{seed, Error, Image, Result};
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Aggregate of `samples` stochastic forward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    pub samples: usize,
    pub seed: u64,
    /// Predictive mean `μ̂`.
    pub mean: Image,
    /// Total predictive standard deviation `√(σ_D² + σ_M²)`.
    pub total: Image,
    /// Data (aleatoric) standard deviation.
    pub data: Image,
    /// Model (epistemic) standard deviation.
    pub model: Image,
}

/// Per-sample variance of the predictive distribution at one pixel.
fn sample_variance(likelihood: Likelihood, mu: f64, sigma: Option<f64>) -> f64 {
    match likelihood {
        // Laplace(μ, b) has variance 2b².
        Likelihood::Laplacian => 2.0 * sigma.unwrap_or(0.0).powi(2),
        Likelihood::Gaussian => sigma.unwrap_or(0.0).powi(2),
        Likelihood::Bernoulli => mu * (1.0 - mu),
    }
}

/// Combines per-sample maps into mean, data, model and total uncertainty.
pub fn decompose(likelihood: Likelihood, maps: &[PredictionMaps], seed: u64) -> Result<PredictionResult> {
    let first = maps.first().ok_or_else(|| Error::Config("need at least one sample".into()))?;
    let (h, w) = (first.mu.height(), first.mu.width());
    for m in maps {
        first.mu.check_same_shape(&m.mu)?;
        if likelihood != Likelihood::Bernoulli {
            let s = m
                .sigma
                .as_ref()
                .ok_or_else(|| Error::Dimension(alloc::format!("{} sample lacks a σ map", likelihood.name())))?;
            first.mu.check_same_shape(s)?;
        }
    }
    let k = maps.len() as f64;
    let len = h * w;
    // moments about the first sample; identical samples give exactly zero
    let pivot = first.mu.data();
    let mut shift = alloc::vec![0.0; len];
    let mut shift_sq = alloc::vec![0.0; len];
    let mut data_var = alloc::vec![0.0; len];
    for m in maps {
        let sigma = m.sigma.as_ref().map(|s| s.data());
        for (i, &u) in m.mu.data().iter().enumerate() {
            let d = u - pivot[i];
            shift[i] += d;
            shift_sq[i] += d * d;
            data_var[i] += sample_variance(likelihood, u, sigma.map(|s| s[i]));
        }
    }
    let mean: Vec<f64> = pivot.iter().zip(&shift).map(|(p, s)| p + s / k).collect();
    let data: Vec<f64> = data_var.iter().map(|v| (v / k).sqrt()).collect();
    let model: Vec<f64> = shift.iter().zip(&shift_sq).map(|(s, sq)| (sq / k - (s / k) * (s / k)).max(0.0).sqrt()).collect();
    let total = data.iter().zip(&model).map(|(d, m)| d.hypot(*m)).collect();
    Ok(PredictionResult {
        samples: maps.len(),
        seed,
        mean: Image::new(h, w, mean)?,
        total: Image::new(h, w, total)?,
        data: Image::new(h, w, data)?,
        model: Image::new(h, w, model)?,
    })
}

/// Runs `samples` forward passes with dropout active, sample `k` using masks
/// seeded by `derive_indexed(seed, k)`, and decomposes the result.
pub fn predict_mc<T: Real>(w: &NetworkWeights<T>, x: &Image, samples: usize, seed: u64) -> Result<PredictionResult> {
    if samples < 1 {
        return Err(Error::Config("Monte Carlo sample count must be at least 1".into()));
    }
    let maps = (0..samples)
        .map(|k| w.predict_maps(x, true, seed::derive_indexed(seed, k as u64)))
        .collect::<Result<Vec<_>>>()?;
    decompose(w.config().likelihood, &maps, seed)
}
