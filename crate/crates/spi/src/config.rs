//! Experiment configuration: a single strict JSON document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spi_core::bcnn::{
    AdamConfig, BernoulliReduction, Likelihood, LrSchedule, NetworkConfig, TrainingConfig,
};
use spi_core::datasets::SplitCounts;
use spi_core::patterns;
use spi_core::recon::LsqrOptions;

use crate::{files, Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// Base of every training seed (initialization, shuffling, dropout).
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub sensing: SensingSpec,
    #[serde(default)]
    pub lsqr: LsqrSpec,
    pub network: NetworkSpec,
    pub training: TrainingSpec,
    pub prediction: PredictionSpec,
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    /// IDX3 unsigned-byte image file (MNIST).
    Idx,
    /// STL-10 `*_X.bin` image file.
    Stl10,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub format: DatasetFormat,
    /// Image files, concatenated in order.
    pub paths: Vec<PathBuf>,
    pub side: usize,
    pub split: SplitSpec,
    pub split_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl From<SplitSpec> for SplitCounts {
    fn from(s: SplitSpec) -> Self {
        SplitCounts { train: s.train, val: s.val, test: s.test }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingSpec {
    /// `n² / m` for each grid column.
    pub compression_ratios: Vec<usize>,
    pub snr_db: Vec<f64>,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LsqrSpec {
    pub max_iterations: usize,
    pub atol: f64,
    pub btol: f64,
    pub conlim: f64,
}

impl Default for LsqrSpec {
    fn default() -> Self {
        let d = LsqrOptions::default();
        Self { max_iterations: d.max_iterations, atol: d.atol, btol: d.btol, conlim: d.conlim }
    }
}

impl LsqrSpec {
    pub fn options(&self) -> LsqrOptions {
        LsqrOptions {
            max_iterations: self.max_iterations,
            atol: self.atol,
            btol: self.btol,
            conlim: self.conlim,
            ..LsqrOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LikelihoodName {
    Laplacian,
    Gaussian,
    Bernoulli,
}

impl From<LikelihoodName> for Likelihood {
    fn from(l: LikelihoodName) -> Self {
        match l {
            LikelihoodName::Laplacian => Likelihood::Laplacian,
            LikelihoodName::Gaussian => Likelihood::Gaussian,
            LikelihoodName::Bernoulli => Likelihood::Bernoulli,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReductionName {
    #[default]
    Sum,
    Mean,
}

fn default_levels() -> usize {
    3
}
fn default_base() -> usize {
    32
}
fn default_dropout() -> f64 {
    0.1
}
fn default_l2() -> f64 {
    1e-6
}
fn default_sigma_floor() -> f64 {
    1e-3
}
fn default_clamp() -> f64 {
    1e-7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_base")]
    pub base_channels: usize,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    #[serde(default = "default_l2")]
    pub l2_factor: f64,
    pub likelihoods: Vec<LikelihoodName>,
    #[serde(default = "default_sigma_floor")]
    pub sigma_floor: f64,
    #[serde(default = "default_clamp")]
    pub bernoulli_clamp: f64,
    #[serde(default)]
    pub bernoulli_reduction: ReductionName,
}

impl NetworkSpec {
    pub fn config(&self, likelihood: Likelihood) -> NetworkConfig {
        NetworkConfig {
            levels: self.levels,
            base_channels: self.base_channels,
            dropout_rate: self.dropout_rate,
            l2_factor: self.l2_factor,
            likelihood,
            sigma_floor: self.sigma_floor,
            bernoulli_clamp: self.bernoulli_clamp,
            bernoulli_reduction: match self.bernoulli_reduction {
                ReductionName::Sum => BernoulliReduction::Sum,
                ReductionName::Mean => BernoulliReduction::Mean,
            },
        }
    }

    pub fn likelihoods(&self) -> Vec<Likelihood> {
        self.likelihoods.iter().map(|&l| l.into()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "lowercase", deny_unknown_fields)]
pub enum LrSpec {
    Linear { start: f64, end: f64 },
    Constant { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamSpec {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamSpec {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self { beta1: a.beta1, beta2: a.beta2, epsilon: a.epsilon }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub learning_rate: LrSpec,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub adam: AdamSpec,
}

impl TrainingSpec {
    /// Training settings with the given per-cell seeds.
    pub fn config(&self, init_seed: u64, shuffle_seed: u64, dropout_seed: u64) -> TrainingConfig {
        TrainingConfig {
            adam: AdamConfig { beta1: self.adam.beta1, beta2: self.adam.beta2, epsilon: self.adam.epsilon },
            lr: match self.learning_rate {
                LrSpec::Linear { start, end } => LrSchedule::Linear { start, end },
                LrSpec::Constant { value } => LrSchedule::Constant(value),
            },
            batch_size: self.batch_size,
            epochs: self.epochs,
            shuffle_seed,
            init_seed,
            dropout_seed,
        }
    }
}

fn default_samples() -> usize {
    64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionSpec {
    /// Monte Carlo dropout passes per test image.
    #[serde(default = "default_samples")]
    pub samples: usize,
    pub seed: u64,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    /// Test images written as PGM per cell; all of them when absent.
    #[serde(default)]
    pub image_samples: Option<usize>,
    /// Write the simulated `SPI1` containers.
    #[serde(default = "yes")]
    pub containers: bool,
}

impl ExperimentConfig {
    /// Parses a config without checking paths.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads, parses and fully validates a config file. Relative paths are
    /// taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = String::from_utf8(files::read(path)?)
            .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in &mut cfg.dataset.paths {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.output.dir.is_relative() {
            cfg.output.dir = base.join(&cfg.output.dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Schema-level checks plus the existence of every referenced path.
    pub fn validate(&self) -> Result<()> {
        self.validate_values()?;
        self.check_paths()
    }

    /// Value-range checks that do not touch the filesystem.
    pub fn validate_values(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.version != CONFIG_VERSION {
            return fail(format!("config version {} is not supported (expected {CONFIG_VERSION})", self.version));
        }
        let d = &self.dataset;
        if d.paths.is_empty() {
            return fail("dataset.paths is empty".into());
        }
        patterns::log2_side(d.side).map_err(|e| Error::Config(format!("dataset.side: {e}")))?;
        if d.split.train == 0 || d.split.test == 0 {
            return fail("dataset.split needs training and test images".into());
        }
        let s = &self.sensing;
        if s.compression_ratios.is_empty() {
            return fail("sensing.compression_ratios is empty".into());
        }
        if s.snr_db.is_empty() {
            return fail("sensing.snr_db is empty".into());
        }
        let pixels = d.side * d.side;
        for &r in &s.compression_ratios {
            if r == 0 || pixels % r != 0 {
                return fail(format!("compression ratio {r} does not divide {pixels} pixels"));
            }
        }
        if let Some(v) = s.snr_db.iter().find(|v| !v.is_finite()) {
            return fail(format!("SNR {v} dB is not finite"));
        }
        if has_duplicates(&s.compression_ratios) || has_duplicates(&s.snr_db) {
            return fail("duplicate entries in the sensing grid".into());
        }
        self.lsqr.options().validate().map_err(|e| Error::Config(format!("lsqr: {e}")))?;
        let n = &self.network;
        if n.likelihoods.is_empty() {
            return fail("network.likelihoods is empty".into());
        }
        if has_duplicates(&n.likelihoods) {
            return fail("duplicate likelihoods".into());
        }
        n.config(Likelihood::Bernoulli).validate().map_err(|e| Error::Config(format!("network: {e}")))?;
        if d.side % (1 << n.levels) != 0 {
            return fail(format!("side {} is not divisible by 2^{}", d.side, n.levels));
        }
        self.training.config(0, 0, 0).validate().map_err(|e| Error::Config(format!("training: {e}")))?;
        if self.training.batch_size > d.split.train {
            return fail(format!(
                "batch size {} exceeds the {} training images",
                self.training.batch_size, d.split.train
            ));
        }
        if self.prediction.samples < 1 {
            return fail("prediction.samples must be at least 1".into());
        }
        Ok(())
    }

    pub fn check_paths(&self) -> Result<()> {
        for p in &self.dataset.paths {
            if !p.is_file() {
                return Err(Error::Config(format!("dataset file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        files::sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

fn has_duplicates<T: PartialEq>(v: &[T]) -> bool {
    v.iter().enumerate().any(|(i, a)| v[..i].contains(a))
}
