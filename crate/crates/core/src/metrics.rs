//! Image quality and calibration metrics.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::bcnn::{Likelihood, PredictionResult};
use crate::{Error, Image, Result};
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Mean absolute error `(1/M) Σ |a − b|`.
pub fn mae(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    if a.is_empty() {
        return Err(Error::Dimension("empty images".into()));
    }
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.len() as f64)
}

/// SSIM parameters: Gaussian window and stabilizing constants for a dynamic range of 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, dynamic_range: 1.0 }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1-D Gaussian taps.
    pub fn taps(&self) -> Vec<f64> {
        let radius = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - radius;
                (-(d * d) / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

/// Half-sample symmetric reflection: `-1 → 0`, `n → n − 1`.
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Separable filtering with reflected borders; output has the input's shape.
fn gaussian_filter(data: &[f64], height: usize, width: usize, taps: &[f64]) -> Vec<f64> {
    let radius = (taps.len() / 2) as isize;
    let mut rows = vec![0.0; data.len()];
    for r in 0..height {
        for c in 0..width {
            rows[r * width + c] = taps
                .iter()
                .enumerate()
                .map(|(k, w)| w * data[r * width + reflect_index(c as isize + k as isize - radius, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; data.len()];
    for r in 0..height {
        for c in 0..width {
            out[r * width + c] = taps
                .iter()
                .enumerate()
                .map(|(k, w)| w * rows[reflect_index(r as isize + k as isize - radius, height) * width + c])
                .sum();
        }
    }
    out
}

/// Mean structural similarity with the default window (11×11 Gaussian, σ = 1.5).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_with(a, b, &SsimParams::default())
}

pub fn ssim_with(a: &Image, b: &Image, params: &SsimParams) -> Result<f64> {
    a.check_same_shape(b)?;
    let (h, w) = (a.height(), a.width());
    if h < params.window || w < params.window {
        return Err(Error::Dimension(format!(
            "{h}x{w} image is smaller than the {}-pixel SSIM window",
            params.window
        )));
    }
    let taps = params.taps();
    let (x, y) = (a.data(), b.data());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let mu_x = gaussian_filter(x, h, w, &taps);
    let mu_y = gaussian_filter(y, h, w, &taps);
    let e_xx = gaussian_filter(&xx, h, w, &taps);
    let e_yy = gaussian_filter(&yy, h, w, &taps);
    let e_xy = gaussian_filter(&xy, h, w, &taps);
    let (c1, c2) = (params.c1(), params.c2());
    let total: f64 = (0..h * w)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / (h * w) as f64)
}

/// Squared Pearson correlation between two equally shaped maps.
pub fn r_squared(err: &Image, unc: &Image) -> Result<f64> {
    err.check_same_shape(unc)?;
    r_squared_slices(err.data(), unc.data())
}

pub fn r_squared_slices(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Dimension(format!("lengths {} and {}", x.len(), y.len())));
    }
    let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    if constant(x) || constant(y) {
        return Err(Error::DegenerateStatistics("zero-variance input to R²".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxx += da * da;
        syy += db * db;
        sxy += da * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateStatistics("zero-variance input to R²".into()));
    }
    Ok((sxy * sxy) / (sxx * syy))
}

/// How the error/uncertainty R² of a test set is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum R2Mode {
    /// R² per image, averaged over images with defined R².
    #[default]
    PerImageMean,
    /// One R² over all pixels of all images.
    Pooled,
}

/// Aggregate metrics of one trained network on a test set.
#[derive(Debug, Clone, PartialEq)]
pub struct TestsetMetrics {
    pub mae_mean: f64,
    pub mae_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    /// `None` when R² is undefined for every image.
    pub r2_mean: Option<f64>,
    pub data_unc_mean: f64,
    pub model_unc_mean: f64,
    pub images: usize,
    /// Images that contributed to `r2_mean`.
    pub r2_images: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// MAE and SSIM of `μ̂` against the truth, R²(|truth − μ̂|, σ̂) and mean uncertainty components.
pub fn evaluate_testset(
    predictions: &[PredictionResult],
    truths: &[Image],
    mode: R2Mode,
) -> Result<TestsetMetrics> {
    if predictions.len() != truths.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} ground truths",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    let mut maes = Vec::with_capacity(truths.len());
    let mut ssims = Vec::with_capacity(truths.len());
    let mut r2s = Vec::new();
    let mut pooled_err = Vec::new();
    let mut pooled_unc = Vec::new();
    let (mut data_sum, mut model_sum, mut pixels) = (0.0, 0.0, 0usize);
    for (p, t) in predictions.iter().zip(truths) {
        maes.push(mae(&p.mean, t)?);
        ssims.push(ssim(&p.mean, t)?);
        let err = t.abs_diff(&p.mean)?;
        match mode {
            R2Mode::PerImageMean => match r_squared(&err, &p.total) {
                Ok(r2) => r2s.push(r2),
                Err(Error::DegenerateStatistics(_)) => {}
                Err(e) => return Err(e),
            },
            R2Mode::Pooled => {
                pooled_err.extend_from_slice(err.data());
                pooled_unc.extend_from_slice(p.total.data());
            }
        }
        data_sum += p.data.data().iter().sum::<f64>();
        model_sum += p.model.data().iter().sum::<f64>();
        pixels += p.data.len();
    }
    let (mae_mean, mae_std) = mean_std(&maes);
    let (ssim_mean, ssim_std) = mean_std(&ssims);
    let (r2_mean, r2_images) = match mode {
        R2Mode::PerImageMean if r2s.is_empty() => (None, 0),
        R2Mode::PerImageMean => (Some(mean_std(&r2s).0), r2s.len()),
        R2Mode::Pooled => match r_squared_slices(&pooled_err, &pooled_unc) {
            Ok(r2) => (Some(r2), truths.len()),
            Err(Error::DegenerateStatistics(_)) => (None, 0),
            Err(e) => return Err(e),
        },
    };
    Ok(TestsetMetrics {
        mae_mean,
        mae_std,
        ssim_mean,
        ssim_std,
        r2_mean,
        data_unc_mean: data_sum / pixels as f64,
        model_unc_mean: model_sum / pixels as f64,
        images: truths.len(),
        r2_images,
    })
}

/// One line of the metrics table: a (compression, likelihood) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRow {
    pub compression: f64,
    pub likelihood: Likelihood,
    pub metrics: TestsetMetrics,
}

impl EvaluationRow {
    pub const CSV_HEADER: &'static str =
        "compression,likelihood,mae_mean,mae_std,ssim_mean,ssim_std,r2_mean,data_unc_mean,model_unc_mean";

    /// CSV record matching [`Self::CSV_HEADER`]; an undefined R² is an empty field.
    pub fn to_csv_record(&self) -> String {
        let m = &self.metrics;
        let mut out = String::new();
        let _ = write!(
            out,
            "{},{},{},{},{},{},",
            self.compression,
            self.likelihood.name(),
            m.mae_mean,
            m.mae_std,
            m.ssim_mean,
            m.ssim_std
        );
        if let Some(r2) = m.r2_mean {
            let _ = write!(out, "{r2}");
        }
        let _ = write!(out, ",{},{}", m.data_unc_mean, m.model_unc_mean);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(side: usize, f: impl Fn(usize, usize) -> f64) -> Image {
        Image::square(side, (0..side * side).map(|i| f(i / side, i % side)).collect()).unwrap()
    }

    #[test]
    fn mae_examples() {
        let x = img(4, |r, c| (r * 4 + c) as f64 / 16.0);
        assert_eq!(mae(&x, &x).unwrap(), 0.0);
        assert_eq!(mae(&Image::zeros(3, 3), &Image::filled(3, 3, 1.0)).unwrap(), 1.0);
        let a = Image::new(1, 2, vec![0.0, 0.5]).unwrap();
        let b = Image::new(1, 2, vec![0.5, 1.0]).unwrap();
        assert_eq!(mae(&a, &b).unwrap(), 0.5);
        assert!(matches!(mae(&a, &x), Err(Error::Dimension(_))));
    }

    #[test]
    fn reflection_indices() {
        assert_eq!(reflect_index(-1, 5), 0);
        assert_eq!(reflect_index(-3, 5), 2);
        assert_eq!(reflect_index(5, 5), 4);
        assert_eq!(reflect_index(7, 5), 2);
    }

    #[test]
    fn ssim_identity_and_small_image() {
        let x = img(16, |r, c| ((r * 3 + c * 5) % 11) as f64 / 10.0);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let small = Image::zeros(10, 10);
        assert!(matches!(ssim(&small, &small), Err(Error::Dimension(_))));
    }

    #[test]
    fn r_squared_examples() {
        let err = img(8, |r, c| ((r * 7 + c * 3) % 5) as f64);
        let unc = Image::square(8, err.data().iter().map(|e| 2.0 * e + 0.1).collect()).unwrap();
        assert!((r_squared(&err, &unc).unwrap() - 1.0).abs() < 1e-12);
        let flat = Image::filled(8, 8, 0.3);
        assert!(matches!(r_squared(&flat, &unc), Err(Error::DegenerateStatistics(_))));
    }

    #[test]
    fn csv_record_leaves_missing_r2_empty() {
        let row = EvaluationRow {
            compression: 16.0,
            likelihood: Likelihood::Bernoulli,
            metrics: TestsetMetrics {
                mae_mean: 0.5,
                mae_std: 0.0,
                ssim_mean: 1.0,
                ssim_std: 0.0,
                r2_mean: None,
                data_unc_mean: 0.25,
                model_unc_mean: 0.0,
                images: 1,
                r2_images: 0,
            },
        };
        assert_eq!(row.to_csv_record(), "16,bernoulli,0.5,0,1,0,,0.25,0");
        assert_eq!(EvaluationRow::CSV_HEADER.split(',').count(), 9);
    }
}
