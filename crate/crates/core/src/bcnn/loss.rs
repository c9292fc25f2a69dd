//! Negative log-likelihoods and their gradients with respect to the raw head outputs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::network::Tensor;
use super::real::Real;
use super::{BernoulliReduction, Likelihood, NetworkConfig, PredictionMaps};
use crate::{Error, Image, Result};
#[cfg(not(feature = "std"))]
use num_traits::Float;

const LN_2: f64 = core::f64::consts::LN_2;
/// `ln √(2π)`.
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn check_target(y: &Image) -> Result<()> {
    if y.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Data("target pixels must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Negative log-likelihood of `y` under the per-pixel distributions in `maps`.
///
/// Laplacian and Gaussian losses are pixel means; the Bernoulli loss is a pixel
/// sum unless `cfg.bernoulli_reduction` asks for the mean.
pub fn nll_loss(cfg: &NetworkConfig, maps: &PredictionMaps, y: &Image) -> Result<f64> {
    check_target(y)?;
    maps.mu.check_same_shape(y)?;
    let m = y.len() as f64;
    let mu = maps.mu.data();
    match cfg.likelihood {
        Likelihood::Bernoulli => {
            let eps = cfg.bernoulli_clamp;
            let sum: f64 = mu
                .iter()
                .zip(y.data())
                .map(|(&p, &t)| {
                    let p = p.clamp(eps, 1.0 - eps);
                    (t - 1.0) * (1.0 - p).ln() - t * p.ln()
                })
                .sum();
            Ok(match cfg.bernoulli_reduction {
                BernoulliReduction::Sum => sum,
                BernoulliReduction::Mean => sum / m,
            })
        }
        lik @ (Likelihood::Laplacian | Likelihood::Gaussian) => {
            let sigma = maps
                .sigma
                .as_ref()
                .ok_or_else(|| Error::Dimension(format!("{} loss needs a σ map", lik.name())))?;
            sigma.check_same_shape(y)?;
            if sigma.data().iter().any(|&s| !(s > 0.0)) {
                return Err(Error::Data("σ map must be positive".into()));
            }
            let sum: f64 = mu
                .iter()
                .zip(sigma.data())
                .zip(y.data())
                .map(|((&u, &s), &t)| match lik {
                    Likelihood::Laplacian => (t - u).abs() / s + (2.0 * s).ln(),
                    _ => (t - u) * (t - u) / (2.0 * s * s) + LN_SQRT_2PI + s.ln(),
                })
                .sum();
            Ok(sum / m)
        }
    }
}

/// Sum of squares of every tensor entry (kernels and biases).
pub fn l2_penalty<T: Real>(tensors: &[Tensor<T>]) -> f64 {
    tensors.iter().flat_map(|t| t.data.iter()).map(|w| w.as_f64() * w.as_f64()).sum()
}

/// `nll_loss + l2_factor · Σ w²`.
pub fn total_loss<T: Real>(
    tensors: &[Tensor<T>],
    cfg: &NetworkConfig,
    maps: &PredictionMaps,
    y: &Image,
) -> Result<f64> {
    Ok(nll_loss(cfg, maps, y)? + cfg.l2_factor * l2_penalty(tensors))
}

/// Loss and gradient with respect to the raw head outputs `z` (channel-major,
/// `μ` logits first, then pre-softplus σ). Agrees with [`nll_loss`] applied to
/// the squashed maps; the Bernoulli term is evaluated on the logits, so the
/// clamp only comes into play when `|z| > ln((1 − ε)/ε)`.
pub fn head_loss<T: Real>(cfg: &NetworkConfig, z: &[T], y: &[f64]) -> (f64, Vec<T>) {
    let m = y.len();
    let mut grad = vec![T::zero(); z.len()];
    let mut total = 0.0;
    match cfg.likelihood {
        Likelihood::Bernoulli => {
            let scale = match cfg.bernoulli_reduction {
                BernoulliReduction::Sum => 1.0,
                BernoulliReduction::Mean => 1.0 / m as f64,
            };
            // −t·ln σ(z) − (1 − t)·ln(1 − σ(z)) = softplus(z) − t·z, finite for every z
            for ((g, &zi), &t) in grad.iter_mut().zip(&z[..m]).zip(y) {
                let zi = zi.as_f64();
                total += softplus(zi) - t * zi;
                *g = T::from_f64(scale * (sigmoid(zi) - t));
            }
            total *= scale;
        }
        lik @ (Likelihood::Laplacian | Likelihood::Gaussian) => {
            let inv_m = 1.0 / m as f64;
            let (g_mu, g_sigma) = grad.split_at_mut(m);
            for i in 0..m {
                let zm = z[i].as_f64();
                let zs = z[m + i].as_f64();
                let mu = sigmoid(zm);
                let sigma = softplus(zs) + cfg.sigma_floor;
                let r = y[i] - mu;
                let (loss, d_mu, d_sigma) = match lik {
                    Likelihood::Laplacian => (
                        r.abs() / sigma + LN_2 + sigma.ln(),
                        -r.signum() / sigma,
                        -r.abs() / (sigma * sigma) + 1.0 / sigma,
                    ),
                    _ => (
                        r * r / (2.0 * sigma * sigma) + LN_SQRT_2PI + sigma.ln(),
                        -r / (sigma * sigma),
                        -r * r / (sigma * sigma * sigma) + 1.0 / sigma,
                    ),
                };
                total += loss;
                g_mu[i] = T::from_f64(inv_m * d_mu * mu * (1.0 - mu));
                g_sigma[i] = T::from_f64(inv_m * d_sigma * sigmoid(zs));
            }
            total *= inv_m;
        }
    }
    (total, grad)
}

/// Squashes raw head outputs into `(μ, σ)` maps.
pub(crate) fn head_maps<T: Real>(cfg: &NetworkConfig, z: &[T], side: usize) -> Result<PredictionMaps> {
    let m = side * side;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite network output".into()));
    }
    let mu = Image::square(side, z[..m].iter().map(|v| sigmoid(v.as_f64())).collect())?;
    let sigma = match cfg.likelihood {
        Likelihood::Bernoulli => None,
        _ => Some(Image::square(
            side,
            z[m..2 * m].iter().map(|v| softplus(v.as_f64()) + cfg.sigma_floor).collect(),
        )?),
    };
    Ok(PredictionMaps { mu, sigma })
}
