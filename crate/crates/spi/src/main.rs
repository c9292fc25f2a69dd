use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use spi_core::metrics::EvaluationRow;
use spi_core::patterns::{build_measurement_matrix, russian_doll_order};
use spi_core::Image;

use spi::config::ExperimentConfig;
use spi::manifest::Manifest;
use spi::pipeline::{self, Artifacts, CellId, RunOptions};
use spi::{files, pgm, report};

#[derive(Parser)]
#[command(name = "spi", version, about = "Simulated single-pixel imaging with Bayesian reconstruction networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed; overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CellArgs {
    #[command(flatten)]
    common: Common,
    /// Grid cell as `compression,snr_db,likelihood`; may be omitted when the grid has one cell.
    #[arg(long)]
    cell: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the nested Hadamard ordering and the first patterns as images.
    GenPatterns {
        #[arg(long)]
        side: usize,
        /// Number of patterns written as PGM.
        #[arg(long, default_value_t = 16)]
        images: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate measurements and LSQR inputs for every (compression, SNR) setting.
    Simulate(Common),
    /// Train the network of one cell.
    Train(CellArgs),
    /// Monte Carlo prediction on the test split from a trained checkpoint.
    Predict {
        #[command(flatten)]
        cell: CellArgs,
        /// Checkpoint; defaults to the cell's `weights.bcnn` under the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Test-set metrics of a trained checkpoint.
    Evaluate {
        #[command(flatten)]
        cell: CellArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the whole grid (or one cell) and write the manifest.
    Run {
        #[command(flatten)]
        cell: CellArgs,
        /// Cells trained concurrently.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Trend tables, likelihood table and summary from a run manifest.
    Report {
        /// Manifest file or run directory.
        #[arg(long)]
        manifest: PathBuf,
        /// Report directory; defaults to `<run>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(c: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&c.config).with_context(|| format!("loading {}", c.config.display()))?;
    if let Some(out) = &c.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn select_cell(cfg: &ExperimentConfig, text: Option<&str>) -> anyhow::Result<CellId> {
    let grid = pipeline::grid(cfg);
    match text {
        Some(t) => {
            let cell = CellId::parse(t)?;
            if !grid.contains(&cell) {
                bail!("cell {cell} is not part of the configured grid");
            }
            Ok(cell)
        }
        None if grid.len() == 1 => Ok(grid[0]),
        None => bail!("the grid has {} cells; choose one with --cell", grid.len()),
    }
}

fn pattern_image(side: usize, p: &[i8]) -> anyhow::Result<Image> {
    Ok(Image::square(side, p.iter().map(|&v| v as f64).collect())?)
}

fn gen_patterns(side: usize, images: usize, out: &Path) -> anyhow::Result<()> {
    let order = russian_doll_order(side)?;
    files::write(&out.join("ordering.csv"), order.to_csv().as_bytes())?;
    let a = build_measurement_matrix(side, images.min(side * side))?;
    for i in 0..a.rows() {
        pgm::write(&out.join(format!("pattern_{i:04}.pgm")), &pattern_image(side, &a.pattern(i))?)?;
    }
    println!("{} patterns, level boundaries {:?}", order.len(), order.level_boundaries());
    Ok(())
}

fn simulate(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let (dataset, _) = pipeline::load_dataset(cfg)?;
    let artifacts = Artifacts::new(&cfg.output.dir);
    for &c in &cfg.sensing.compression_ratios {
        for &snr in &cfg.sensing.snr_db {
            let g = pipeline::simulate_group(cfg, &dataset, c, snr, Some(&artifacts))?;
            let dir = format!("data/{}/inputs", pipeline::group_label(c, snr));
            let limit = cfg.output.image_samples.unwrap_or(g.inputs[2].len()).min(g.inputs[2].len());
            for (i, x) in g.inputs[2].iter().take(limit).enumerate() {
                artifacts.write_pgm(&format!("{dir}/{i:04}.pgm"), x)?;
            }
            let m = g.input_metrics;
            println!("{c}X {snr} dB: LSQR test MAE {:.4} SSIM {:.4}", m.mae_mean, m.ssim_mean);
        }
    }
    Ok(())
}

fn checkpoint_path(cfg: &ExperimentConfig, cell: &CellId, given: Option<PathBuf>) -> PathBuf {
    given.unwrap_or_else(|| cfg.output.dir.join(format!("cells/{}/weights.bcnn", cell.label())))
}

fn train(cfg: &ExperimentConfig, cell: &CellId) -> anyhow::Result<()> {
    let (dataset, _) = pipeline::load_dataset(cfg)?;
    let group = pipeline::simulate_group(cfg, &dataset, cell.compression, cell.snr_db, None)?;
    let (weights, history) = pipeline::train_cell(cfg, &dataset, &group, cell)?;
    let dir = cfg.output.dir.join(format!("cells/{}", cell.label()));
    files::save_checkpoint(&dir.join("weights.bcnn"), &weights)?;
    files::write(&dir.join("history.csv"), history.to_csv().as_bytes())?;
    if let Some(last) = history.epochs.last() {
        println!("{cell}: final train loss {:.5}", last.train_loss);
    }
    Ok(())
}

fn predict(cfg: &ExperimentConfig, cell: &CellId, checkpoint: Option<PathBuf>, write_images: bool) -> anyhow::Result<()> {
    let weights = files::load_checkpoint(&checkpoint_path(cfg, cell, checkpoint))?;
    let (dataset, _) = pipeline::load_dataset(cfg)?;
    let group = pipeline::simulate_group(cfg, &dataset, cell.compression, cell.snr_db, None)?;
    let seeds = pipeline::cell_seeds(cfg, cell);
    let predictions = pipeline::predict_inputs(&weights, &group.inputs[2], cfg.prediction.samples, seeds.prediction)?;
    let dir = format!("cells/{}", cell.label());
    let artifacts = Artifacts::new(&cfg.output.dir);
    if write_images {
        pipeline::write_images(&artifacts, &dir, &dataset.test, &group.inputs[2], &predictions, cfg.output.image_samples)?;
        return Ok(());
    }
    let metrics = pipeline::evaluate_predictions(&predictions, &dataset.test)?;
    let row = EvaluationRow { compression: cell.compression as f64, likelihood: cell.likelihood(), metrics };
    let csv = format!("{}\n{}\n", EvaluationRow::CSV_HEADER, row.to_csv_record());
    artifacts.write(&format!("{dir}/metrics.csv"), csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

fn run(cfg: &ExperimentConfig, cell: Option<&str>, workers: usize) -> anyhow::Result<bool> {
    let cell = cell.map(|_| select_cell(cfg, cell)).transpose()?;
    let manifest = pipeline::run_pipeline(cfg, &RunOptions { workers, cell })?;
    let failed = manifest.failed_cells();
    if failed > 0 {
        eprintln!("{failed} of {} cells failed; see {}", manifest.cells.len(), cfg.output.dir.join("manifest.json").display());
    }
    Ok(failed == 0)
}

fn emit_report(manifest_path: &Path, out: Option<PathBuf>) -> anyhow::Result<bool> {
    let manifest = Manifest::load(manifest_path)?;
    let run_dir = if manifest_path.is_dir() { manifest_path.to_owned() } else { manifest_path.parent().unwrap_or(Path::new(".")).to_owned() };
    let out = out.unwrap_or_else(|| run_dir.join("report"));
    let (report, written) = report::emit_report(&manifest, &out)?;
    print!("{}", report.summary);
    println!("{} report files in {}", written.len(), out.display());
    Ok(report.gaps == 0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenPatterns { side, images, out } => gen_patterns(side, images, &out).map(|_| true),
        Command::Simulate(c) => load_config(&c).and_then(|cfg| simulate(&cfg)).map(|_| true),
        Command::Train(a) => load_config(&a.common)
            .and_then(|cfg| Ok((select_cell(&cfg, a.cell.as_deref())?, cfg)))
            .and_then(|(cell, cfg)| train(&cfg, &cell))
            .map(|_| true),
        Command::Predict { cell: a, checkpoint } => load_config(&a.common)
            .and_then(|cfg| Ok((select_cell(&cfg, a.cell.as_deref())?, cfg)))
            .and_then(|(cell, cfg)| predict(&cfg, &cell, checkpoint, true))
            .map(|_| true),
        Command::Evaluate { cell: a, checkpoint } => load_config(&a.common)
            .and_then(|cfg| Ok((select_cell(&cfg, a.cell.as_deref())?, cfg)))
            .and_then(|(cell, cfg)| predict(&cfg, &cell, checkpoint, false))
            .map(|_| true),
        Command::Run { cell: a, workers } => load_config(&a.common).and_then(|cfg| run(&cfg, a.cell.as_deref(), workers)),
        Command::Report { manifest, out } => emit_report(&manifest, out),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
