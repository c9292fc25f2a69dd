//! Experiment runner: simulate → reconstruct → train → predict → evaluate for
//! every (compression, SNR, likelihood) cell of a configured grid.

use std::collections::BTreeMap;
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use spi_core::bcnn::{init_network, predict_mc, train, History, Likelihood, NetworkWeights, PredictionResult, TrainError};
use spi_core::datasets::{parse_idx, parse_stl10, preprocess, split_dataset, Dataset, RawStack};
use spi_core::metrics::{evaluate_testset, mae, ssim, EvaluationRow, R2Mode, TestsetMetrics};
use spi_core::patterns::{build_measurement_matrix, MeasurementMatrix};
use spi_core::recon::reconstruct_initial;
use spi_core::sensing::{simulate_batch, Snr};
use spi_core::{seed, Image};

use crate::config::{DatasetFormat, ExperimentConfig, LikelihoodName};
use crate::container::{SimulatedItem, SimulatedSet};
use crate::manifest::{
    CellRecord, CellSeeds, DatasetRecord, FileRecord, GroupRecord, InputMetrics, Manifest, MetricsRecord, SplitSeeds,
    Status, MANIFEST_VERSION,
};
use crate::{files, pgm, Error, Result};

const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Identifies one cell of the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellId {
    pub compression: usize,
    pub snr_db: f64,
    pub likelihood: LikelihoodName,
}

impl CellId {
    pub fn group_label(&self) -> String {
        group_label(self.compression, self.snr_db)
    }

    pub fn likelihood(&self) -> Likelihood {
        self.likelihood.into()
    }

    /// Directory name of the cell's artifacts.
    pub fn label(&self) -> String {
        format!("{}_{}", self.group_label(), self.likelihood().name())
    }

    /// Parses `compression,snr_db,likelihood`, e.g. `16,25,bernoulli`.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        let bad = || Error::Config(format!("cell `{text}` is not `compression,snr_db,likelihood`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let compression = parts[0].trim_end_matches(['x', 'X']).parse().map_err(|_| bad())?;
        let snr_db = parts[1].trim_end_matches("dB").trim_end_matches("db").parse().map_err(|_| bad())?;
        let likelihood = match Likelihood::from_name(parts[2])? {
            Likelihood::Laplacian => LikelihoodName::Laplacian,
            Likelihood::Gaussian => LikelihoodName::Gaussian,
            Likelihood::Bernoulli => LikelihoodName::Bernoulli,
        };
        Ok(Self { compression, snr_db, likelihood })
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}X / {} dB / {}", self.compression, self.snr_db, self.likelihood().name())
    }
}

pub fn group_label(compression: usize, snr_db: f64) -> String {
    format!("{compression}x_{snr_db}db")
}

/// All cells of the grid in run order: compression, then SNR, then likelihood.
pub fn grid(cfg: &ExperimentConfig) -> Vec<CellId> {
    let mut cells = Vec::new();
    for &compression in &cfg.sensing.compression_ratios {
        for &snr_db in &cfg.sensing.snr_db {
            for &likelihood in &cfg.network.likelihoods {
                cells.push(CellId { compression, snr_db, likelihood });
            }
        }
    }
    cells
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Cells run concurrently; `0` is treated as `1`.
    pub workers: usize,
    /// Restrict the run to one cell of the grid.
    pub cell: Option<CellId>,
}

/// Writes files under an output directory and remembers their hashes.
#[derive(Debug)]
pub struct Artifacts {
    root: PathBuf,
    written: Mutex<Vec<FileRecord>>,
}

impl Artifacts {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_owned(), written: Mutex::new(Vec::new()) }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&self, rel: &str, bytes: &[u8]) -> Result<()> {
        files::write(&self.root.join(rel), bytes)?;
        self.record(rel, bytes);
        Ok(())
    }

    fn record(&self, rel: &str, bytes: &[u8]) {
        let rec = FileRecord { path: rel.to_owned(), sha256: files::sha256_hex(bytes), bytes: bytes.len() as u64 };
        let mut w = self.written.lock().unwrap();
        w.retain(|f| f.path != rel);
        w.push(rec);
    }

    pub fn write_pgm(&self, rel: &str, img: &Image) -> Result<()> {
        let (bytes, range) = pgm::encode(img);
        self.write(rel, &bytes)?;
        let side = pgm::sidecar_path(Path::new(rel));
        self.write(&side.to_string_lossy().replace('\\', "/"), &serde_json::to_vec(&range)?)
    }

    pub fn into_records(self) -> Vec<FileRecord> {
        let mut v = self.written.into_inner().unwrap();
        v.sort_by(|a, b| a.path.cmp(&b.path));
        v
    }
}

fn read_stack(format: DatasetFormat, path: &Path) -> Result<RawStack> {
    let bytes = files::read(path)?;
    let parsed = match format {
        DatasetFormat::Idx => parse_idx(&bytes),
        DatasetFormat::Stl10 => parse_stl10(&bytes),
    };
    parsed.map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Reads, preprocesses and splits the configured dataset.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<(Dataset, usize)> {
    let d = &cfg.dataset;
    let mut images = Vec::new();
    for path in &d.paths {
        images.extend(preprocess(&read_stack(d.format, path)?, d.side)?);
    }
    let total = images.len();
    Ok((split_dataset(&d.name, &images, d.split.into(), d.split_seed)?, total))
}

/// Simulated acquisitions and LSQR inputs of one (compression, SNR) setting.
#[derive(Debug, Clone)]
pub struct GroupData {
    pub compression: usize,
    pub snr_db: f64,
    pub matrix: MeasurementMatrix,
    /// LSQR reconstructions for the training, validation and test splits.
    pub inputs: [Vec<Image>; 3],
    pub noise_seeds: SplitSeeds,
    pub input_metrics: InputMetrics,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (mean, (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt())
}

pub fn noise_seeds(cfg: &ExperimentConfig, compression: usize, snr_db: f64) -> SplitSeeds {
    let label = group_label(compression, snr_db);
    let s = |split: &str| seed::derive_seed(cfg.sensing.noise_seed, &["noise", &label, split]);
    SplitSeeds { train: s("train"), val: s("val"), test: s("test") }
}

/// Measures every split, adds noise and reconstructs the network inputs.
pub fn simulate_group(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    compression: usize,
    snr_db: f64,
    artifacts: Option<&Artifacts>,
) -> Result<GroupData> {
    let side = cfg.dataset.side;
    let m = side * side / compression;
    let matrix = build_measurement_matrix(side, m)?;
    let seeds = noise_seeds(cfg, compression, snr_db);
    let splits = [&dataset.train, &dataset.val, &dataset.test];
    let opts = cfg.lsqr.options();
    let mut inputs: [Vec<Image>; 3] = Default::default();
    for (k, (truths, noise_seed)) in splits.iter().zip([seeds.train, seeds.val, seeds.test]).enumerate() {
        let ys = simulate_batch(truths, &matrix, Snr::Db(snr_db), noise_seed)?;
        inputs[k] = ys.iter().map(|y| reconstruct_initial(&matrix, y, &opts)).collect::<spi_core::Result<_>>()?;
        if let (Some(art), true) = (artifacts, cfg.output.containers) {
            let set = SimulatedSet {
                side,
                measurements: m,
                snr_db,
                items: truths
                    .iter()
                    .zip(&ys)
                    .map(|(t, y)| SimulatedItem { truth: t.clone(), measurements: y.values().to_vec() })
                    .collect(),
            };
            art.write(&format!("data/{}/{}.spi1", group_label(compression, snr_db), SPLITS[k]), &set.encode()?)?;
        }
    }
    let maes = inputs[2].iter().zip(&dataset.test).map(|(x, t)| mae(x, t)).collect::<spi_core::Result<Vec<_>>>()?;
    let ssims = inputs[2].iter().zip(&dataset.test).map(|(x, t)| ssim(x, t)).collect::<spi_core::Result<Vec<_>>>()?;
    let ((mae_mean, mae_std), (ssim_mean, ssim_std)) = (mean_std(&maes), mean_std(&ssims));
    Ok(GroupData {
        compression,
        snr_db,
        matrix,
        inputs,
        noise_seeds: seeds,
        input_metrics: InputMetrics { mae_mean, mae_std, ssim_mean, ssim_std },
    })
}

pub fn cell_seeds(cfg: &ExperimentConfig, cell: &CellId) -> CellSeeds {
    let label = cell.label();
    let s = |stage: &str| seed::derive_seed(cfg.seed, &[stage, &label]);
    CellSeeds {
        init: s("init"),
        shuffle: s("shuffle"),
        dropout: s("dropout"),
        prediction: seed::derive_seed(cfg.prediction.seed, &["predict", &label]),
    }
}

/// Trains the cell's network from its derived seeds.
pub fn train_cell(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    group: &GroupData,
    cell: &CellId,
) -> Result<(NetworkWeights<f32>, History)> {
    let seeds = cell_seeds(cfg, cell);
    let net = cfg.network.config(cell.likelihood());
    let w0 = init_network(&net, cfg.dataset.side, seeds.init)?;
    let tcfg = cfg.training.config(seeds.init, seeds.shuffle, seeds.dropout);
    match train(w0, &group.inputs[0], &dataset.train, &group.inputs[1], &dataset.val, &tcfg) {
        Ok(out) => Ok((out.weights, out.history)),
        Err(TrainError::Invalid(e)) => Err(e.into()),
        Err(TrainError::Diverged { epoch, step, .. }) => {
            Err(Error::Core(spi_core::Error::Numeric(format!("training diverged at epoch {epoch}, step {step}"))))
        }
    }
}

/// Monte Carlo prediction for every test input; image `i` uses `derive_indexed(seed, i)`.
pub fn predict_inputs(
    weights: &NetworkWeights<f32>,
    inputs: &[Image],
    samples: usize,
    prediction_seed: u64,
) -> Result<Vec<PredictionResult>> {
    inputs
        .iter()
        .enumerate()
        .map(|(i, x)| Ok(predict_mc(weights, x, samples, seed::derive_indexed(prediction_seed, i as u64))?))
        .collect()
}

pub fn evaluate_predictions(predictions: &[PredictionResult], truths: &[Image]) -> Result<TestsetMetrics> {
    Ok(evaluate_testset(predictions, truths, R2Mode::PerImageMean)?)
}

/// Writes the per-sample maps of the first `limit` test images.
pub fn write_images(
    artifacts: &Artifacts,
    dir: &str,
    truths: &[Image],
    inputs: &[Image],
    predictions: &[PredictionResult],
    limit: Option<usize>,
) -> Result<()> {
    let n = limit.unwrap_or(truths.len()).min(truths.len());
    for i in 0..n {
        let p = &predictions[i];
        let error = truths[i].abs_diff(&p.mean)?;
        let maps: [(&str, &Image); 7] = [
            ("truth", &truths[i]),
            ("input", &inputs[i]),
            ("mean", &p.mean),
            ("error", &error),
            ("uncertainty", &p.total),
            ("data_uncertainty", &p.data),
            ("model_uncertainty", &p.model),
        ];
        for (kind, img) in maps {
            artifacts.write_pgm(&format!("{dir}/images/{i:04}_{kind}.pgm"), img)?;
        }
    }
    Ok(())
}

struct CellOutcome {
    epochs: usize,
    metrics: TestsetMetrics,
}

fn run_cell(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    group: &GroupData,
    cell: &CellId,
    artifacts: &Artifacts,
) -> Result<CellOutcome> {
    let dir = format!("cells/{}", cell.label());
    let started = Instant::now();
    let (weights, history) = train_cell(cfg, dataset, group, cell)?;
    artifacts.write(&format!("{dir}/weights.bcnn"), &spi_core::bcnn::checkpoint::encode(&weights)?)?;
    artifacts.write(&format!("{dir}/history.csv"), history.to_csv().as_bytes())?;
    log::info!("{cell}: trained {} epochs in {:.1?}", history.epochs.len(), started.elapsed());
    let seeds = cell_seeds(cfg, cell);
    let predictions = predict_inputs(&weights, &group.inputs[2], cfg.prediction.samples, seeds.prediction)?;
    let metrics = evaluate_predictions(&predictions, &dataset.test)?;
    write_images(artifacts, &dir, &dataset.test, &group.inputs[2], &predictions, cfg.output.image_samples)?;
    log::info!(
        "{cell}: MAE {:.4} SSIM {:.4} R2 {:?} ({:.1?} total)",
        metrics.mae_mean,
        metrics.ssim_mean,
        metrics.r2_mean,
        started.elapsed()
    );
    Ok(CellOutcome { epochs: history.epochs.len(), metrics })
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

/// Path of the metrics table for one SNR value, relative to the output directory.
pub fn metrics_file(snr_db: f64) -> String {
    format!("metrics/snr_{snr_db}db.csv")
}

/// Runs the grid (or the selected cell) and writes all artifacts plus
/// `manifest.json` under `cfg.output.dir`. Stage failures are confined to
/// their cell and recorded in the manifest.
pub fn run_pipeline(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Manifest> {
    cfg.validate()?;
    let cells: Vec<CellId> = match opts.cell {
        Some(sel) => {
            let found: Vec<CellId> = grid(cfg).into_iter().filter(|c| *c == sel).collect();
            if found.is_empty() {
                return Err(Error::Config(format!("cell {sel} is not part of the configured grid")));
            }
            found
        }
        None => grid(cfg),
    };
    let started = Instant::now();
    let (dataset, source_images) = load_dataset(cfg)?;
    log::info!(
        "{}: {} images, split {}/{}/{}",
        cfg.dataset.name,
        source_images,
        dataset.train.len(),
        dataset.val.len(),
        dataset.test.len()
    );
    let artifacts = Artifacts::new(&cfg.output.dir);

    let mut group_keys: Vec<(usize, f64)> = Vec::new();
    for c in &cells {
        if !group_keys.contains(&(c.compression, c.snr_db)) {
            group_keys.push((c.compression, c.snr_db));
        }
    }
    let mut groups = Vec::new();
    let mut group_records = Vec::new();
    for &(compression, snr_db) in &group_keys {
        let result = catch_unwind(AssertUnwindSafe(|| simulate_group(cfg, &dataset, compression, snr_db, Some(&artifacts))))
            .unwrap_or_else(|p| Err(Error::Format(format!("simulation panicked: {}", panic_message(p)))));
        let record = GroupRecord {
            compression,
            snr_db,
            measurements: cfg.dataset.side * cfg.dataset.side / compression,
            noise_seeds: noise_seeds(cfg, compression, snr_db),
            status: if result.is_ok() { Status::Ok } else { Status::Failed },
            error: result.as_ref().err().map(|e| e.to_string()),
            input: result.as_ref().ok().map(|g| g.input_metrics),
        };
        if let Err(e) = &result {
            log::error!("{compression}X / {snr_db} dB: simulation failed: {e}");
        }
        group_records.push(record);
        groups.push(result);
    }

    let workers = opts.workers.max(1).min(cells.len());
    let next = AtomicUsize::new(0);
    let outcomes: Mutex<Vec<Option<std::result::Result<CellOutcome, String>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cell) = cells.get(i) else { break };
                let g = group_keys.iter().position(|k| *k == (cell.compression, cell.snr_db)).unwrap();
                let outcome = match &groups[g] {
                    Err(e) => Err(format!("simulation failed: {e}")),
                    Ok(group) => catch_unwind(AssertUnwindSafe(|| run_cell(cfg, &dataset, group, cell, &artifacts)))
                        .unwrap_or_else(|p| Err(Error::Format(format!("panic: {}", panic_message(p)))))
                        .map_err(|e| e.to_string()),
                };
                if let Err(e) = &outcome {
                    log::error!("{cell}: {e}");
                }
                outcomes.lock().unwrap()[i] = Some(outcome);
            });
        }
    });

    let outcomes = outcomes.into_inner().unwrap();
    let mut cell_records = Vec::with_capacity(cells.len());
    let mut tables: BTreeMap<usize, (f64, Vec<String>)> = BTreeMap::new();
    for (cell, outcome) in cells.iter().zip(outcomes) {
        let outcome = outcome.unwrap_or_else(|| Err("cell did not run".into()));
        let snr_index = cfg.sensing.snr_db.iter().position(|s| *s == cell.snr_db).unwrap();
        let (status, error, epochs, metrics) = match outcome {
            Ok(o) => {
                let row = EvaluationRow { compression: cell.compression as f64, likelihood: cell.likelihood(), metrics: o.metrics.clone() };
                tables.entry(snr_index).or_insert_with(|| (cell.snr_db, Vec::new())).1.push(row.to_csv_record());
                (Status::Ok, None, o.epochs, Some(MetricsRecord::from(&o.metrics)))
            }
            Err(e) => (Status::Failed, Some(e), 0, None),
        };
        cell_records.push(CellRecord {
            compression: cell.compression,
            snr_db: cell.snr_db,
            likelihood: cell.likelihood,
            status,
            error,
            seeds: cell_seeds(cfg, cell),
            epochs_completed: epochs,
            metrics,
        });
    }
    for (snr_db, rows) in tables.values() {
        let mut csv = String::from(EvaluationRow::CSV_HEADER);
        csv.push('\n');
        for r in rows {
            csv.push_str(r);
            csv.push('\n');
        }
        artifacts.write(&metrics_file(*snr_db), csv.as_bytes())?;
    }

    let [train_idx, val_idx, test_idx] = dataset.indices.clone();
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        dataset: DatasetRecord {
            name: dataset.name.clone(),
            source_images,
            split_seed: dataset.split_seed,
            train: train_idx,
            val: val_idx,
            test: test_idx,
        },
        groups: group_records,
        cells: cell_records,
        files: artifacts.into_records(),
    };
    manifest.save(&cfg.output.dir)?;
    log::info!("run finished in {:.1?}; {} of {} cells failed", started.elapsed(), manifest.failed_cells(), cells.len());
    Ok(manifest)
}
