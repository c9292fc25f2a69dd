//! Single-pixel forward model and measurement noise.

use alloc::format;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::patterns::MeasurementMatrix;
use crate::{seed, Error, Image, Result};
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Noise level of a simulated acquisition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Snr {
    Noiseless,
    /// Ratio of mean squared measurement to noise variance, in decibels.
    Db(f64),
}

impl Snr {
    pub fn db(&self) -> Option<f64> {
        match self {
            Snr::Noiseless => None,
            Snr::Db(v) => Some(*v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensingConfig {
    pub side: usize,
    pub measurements: usize,
    pub snr: Snr,
    pub noise_seed: u64,
}

impl SensingConfig {
    pub fn compression_ratio(&self) -> f64 {
        (self.side * self.side) as f64 / self.measurements as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.measurements < 1 {
            return Err(Error::Config("at least one measurement is required".into()));
        }
        if let Snr::Db(v) = self.snr {
            if !v.is_finite() {
                return Err(Error::Config(format!("SNR {v} dB is not finite")));
            }
        }
        Ok(())
    }
}

/// Bucket-detector readings for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementVector {
    values: Vec<f64>,
    config: SensingConfig,
}

impl MeasurementVector {
    pub fn new(values: Vec<f64>, config: SensingConfig) -> Result<Self> {
        if values.len() != config.measurements {
            return Err(Error::Dimension(format!(
                "{} values for {} measurements",
                values.len(),
                config.measurements
            )));
        }
        Ok(Self { values, config })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn config(&self) -> &SensingConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean squared value `(1/m) Σ y_i²`.
    pub fn power(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64
    }
}

/// Noiseless measurements `y_i = ⟨pattern_i, image⟩`.
pub fn measure(image: &Image, a: &MeasurementMatrix) -> Result<MeasurementVector> {
    if image.height() != a.side() || image.width() != a.side() {
        return Err(Error::Dimension(format!(
            "{}x{} image for a side-{} pattern set",
            image.height(),
            image.width(),
            a.side()
        )));
    }
    if !image.is_finite() {
        return Err(Error::Numeric("image has non-finite pixels".into()));
    }
    let values = a.apply(image.data())?;
    let config = SensingConfig {
        side: a.side(),
        measurements: a.rows(),
        snr: Snr::Noiseless,
        noise_seed: 0,
    };
    MeasurementVector::new(values, config)
}

/// Adds i.i.d. `N(0, σ²)` noise with `σ² = P·10^(−snr/10)` and `P` the mean squared measurement.
pub fn add_awgn(y: &MeasurementVector, snr: Snr, noise_seed: u64) -> Result<MeasurementVector> {
    if y.is_empty() {
        return Err(Error::Data("empty measurement vector".into()));
    }
    let config = SensingConfig { snr, noise_seed, ..y.config };
    let db = match snr {
        Snr::Noiseless => return MeasurementVector::new(y.values.clone(), config),
        Snr::Db(db) => db,
    };
    if !db.is_finite() {
        return Err(Error::Config(format!("SNR {db} dB is not finite")));
    }
    let power = y.power();
    if power == 0.0 {
        return Err(Error::DegenerateSignal(format!(
            "all-zero measurements cannot be given a {db} dB SNR"
        )));
    }
    let sigma = (power * 10f64.powf(-db / 10.0)).sqrt();
    let mut rng = seed::rng(noise_seed);
    let values = y
        .values
        .iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + sigma * z
        })
        .collect();
    MeasurementVector::new(values, config)
}

/// Measures a batch of images; image `i` draws its noise from `derive_indexed(noise_seed, i)`.
pub fn simulate_batch(
    images: &[Image],
    a: &MeasurementMatrix,
    snr: Snr,
    noise_seed: u64,
) -> Result<Vec<MeasurementVector>> {
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let clean = measure(img, a)?;
            add_awgn(&clean, snr, seed::derive_indexed(noise_seed, i as u64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::build_measurement_matrix;
    use alloc::vec;

    #[test]
    fn constant_image_only_excites_dc() {
        let a = build_measurement_matrix(8, 20).unwrap();
        let img = Image::filled(8, 8, 0.25);
        let y = measure(&img, &a).unwrap();
        assert!((y.values()[0] - 0.25 * 64.0).abs() < 1e-12);
        assert!(y.values()[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn two_by_two_enumeration() {
        let a = build_measurement_matrix(2, 4).unwrap();
        let img = Image::square(2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let y = measure(&img, &a).unwrap();
        // The pixel (0,0) sits where every pattern is +1.
        assert_eq!(y.values(), &[1.0, 1.0, 1.0, 1.0]);
        let back: Vec<f64> =
            a.apply_adjoint(y.values()).unwrap().iter().map(|v| v / 4.0).collect();
        assert_eq!(back, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_image_gives_zero_vector() {
        let a = build_measurement_matrix(4, 16).unwrap();
        let y = measure(&Image::zeros(4, 4), &a).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch() {
        let a = build_measurement_matrix(4, 4).unwrap();
        assert!(matches!(measure(&Image::zeros(8, 8), &a), Err(Error::Dimension(_))));
    }

    #[test]
    fn noiseless_is_identity_and_noise_is_seeded() {
        let a = build_measurement_matrix(8, 16).unwrap();
        let img = Image::square(8, (0..64).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        let y = measure(&img, &a).unwrap();
        assert_eq!(add_awgn(&y, Snr::Noiseless, 3).unwrap().values(), y.values());
        let n1 = add_awgn(&y, Snr::Db(25.0), 11).unwrap();
        let n2 = add_awgn(&y, Snr::Db(25.0), 11).unwrap();
        let n3 = add_awgn(&y, Snr::Db(25.0), 12).unwrap();
        assert_eq!(n1, n2);
        assert_ne!(n1.values(), n3.values());
        assert_eq!(n1.config().snr, Snr::Db(25.0));
        assert_eq!(n1.config().noise_seed, 11);
    }

    #[test]
    fn zero_signal_with_finite_snr_is_degenerate() {
        let a = build_measurement_matrix(4, 4).unwrap();
        let y = measure(&Image::zeros(4, 4), &a).unwrap();
        assert!(matches!(add_awgn(&y, Snr::Db(10.0), 1), Err(Error::DegenerateSignal(_))));
        assert!(add_awgn(&y, Snr::Noiseless, 1).is_ok());
    }
}
