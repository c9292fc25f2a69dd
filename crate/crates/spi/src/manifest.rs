//! Run manifest: the configuration, every seed consumed, per-cell outcomes and
//! a content hash for every file written.

use std::path::Path;

use serde::{Deserialize, Serialize};
use spi_core::metrics::TestsetMetrics;

use crate::config::{ExperimentConfig, LikelihoodName};
use crate::{files, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub name: String,
    pub source_images: usize,
    pub split_seed: u64,
    /// Source indices of the training, validation and test images.
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSeeds {
    pub train: u64,
    pub val: u64,
    pub test: u64,
}

/// MAE and SSIM of the LSQR reconstructions on the test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputMetrics {
    pub mae_mean: f64,
    pub mae_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
}

/// One (compression, SNR) acquisition setting shared by its likelihood cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub compression: usize,
    pub snr_db: f64,
    pub measurements: usize,
    pub noise_seeds: SplitSeeds,
    pub status: Status,
    pub error: Option<String>,
    pub input: Option<InputMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSeeds {
    pub init: u64,
    pub shuffle: u64,
    pub dropout: u64,
    pub prediction: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub mae_mean: f64,
    pub mae_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub r2_mean: Option<f64>,
    pub data_unc_mean: f64,
    pub model_unc_mean: f64,
    pub images: usize,
    pub r2_images: usize,
}

impl From<&TestsetMetrics> for MetricsRecord {
    fn from(m: &TestsetMetrics) -> Self {
        Self {
            mae_mean: m.mae_mean,
            mae_std: m.mae_std,
            ssim_mean: m.ssim_mean,
            ssim_std: m.ssim_std,
            r2_mean: m.r2_mean,
            data_unc_mean: m.data_unc_mean,
            model_unc_mean: m.model_unc_mean,
            images: m.images,
            r2_images: m.r2_images,
        }
    }
}

impl From<&MetricsRecord> for TestsetMetrics {
    fn from(m: &MetricsRecord) -> Self {
        Self {
            mae_mean: m.mae_mean,
            mae_std: m.mae_std,
            ssim_mean: m.ssim_mean,
            ssim_std: m.ssim_std,
            r2_mean: m.r2_mean,
            data_unc_mean: m.data_unc_mean,
            model_unc_mean: m.model_unc_mean,
            images: m.images,
            r2_images: m.r2_images,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub compression: usize,
    pub snr_db: f64,
    pub likelihood: LikelihoodName,
    pub status: Status,
    pub error: Option<String>,
    pub seeds: CellSeeds,
    pub epochs_completed: usize,
    pub metrics: Option<MetricsRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub dataset: DatasetRecord,
    pub groups: Vec<GroupRecord>,
    pub cells: Vec<CellRecord>,
    /// Every file written by the run except the manifest itself, sorted by path.
    pub files: Vec<FileRecord>,
}

impl Manifest {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.status == Status::Failed).count()
    }

    pub fn cell(&self, compression: usize, snr_db: f64, likelihood: LikelihoodName) -> Option<&CellRecord> {
        self.cells
            .iter()
            .find(|c| c.compression == compression && c.snr_db == snr_db && c.likelihood == likelihood)
    }

    pub fn group(&self, compression: usize, snr_db: f64) -> Option<&GroupRecord> {
        self.groups.iter().find(|g| g.compression == compression && g.snr_db == snr_db)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        files::write(&dir.join(MANIFEST_FILE), text.as_bytes())
    }

    /// Loads `path`, or `path/manifest.json` when `path` is a directory.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_owned() };
        Ok(serde_json::from_slice(&files::read(&file)?)?)
    }
}
