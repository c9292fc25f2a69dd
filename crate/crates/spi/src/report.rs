//! Pivots a run manifest into trend tables, the likelihood comparison table
//! and a plain-text summary.
//!
//! Grid cells that failed or were never run keep their row; the metric fields
//! are left empty and the `status` column says why.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use spi_core::bcnn::Likelihood;

use crate::config::LikelihoodName;
use crate::manifest::{CellRecord, Manifest, MetricsRecord, Status};
use crate::{files, Error, Result};

const METRIC_COLUMNS: [&str; 8] =
    ["mae_mean", "mae_std", "ssim_mean", "ssim_std", "r2_mean", "data_unc_mean", "model_unc_mean", "status"];

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// File name relative to the report directory, without extension.
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// Metrics against compression ratio, one table per (SNR, likelihood).
    pub compression_trends: Vec<Table>,
    /// Metrics against SNR, one table per (compression, likelihood); empty for single-SNR runs.
    pub snr_trends: Vec<Table>,
    /// Likelihood comparison tables, one per SNR.
    pub comparison: Vec<Table>,
    pub summary: String,
    /// Grid cells without metrics.
    pub gaps: usize,
}

fn name(l: LikelihoodName) -> &'static str {
    Likelihood::from(l).name()
}

fn status_of(cell: Option<&CellRecord>) -> (&'static str, Option<&MetricsRecord>) {
    match cell {
        None => ("missing", None),
        Some(c) if c.status == Status::Failed => ("failed", None),
        Some(c) => match &c.metrics {
            Some(m) => ("ok", Some(m)),
            None => ("missing", None),
        },
    }
}

fn metric_fields(cell: Option<&CellRecord>) -> Vec<String> {
    let (status, m) = status_of(cell);
    let mut out = match m {
        Some(m) => vec![
            m.mae_mean.to_string(),
            m.mae_std.to_string(),
            m.ssim_mean.to_string(),
            m.ssim_std.to_string(),
            m.r2_mean.map(|v| v.to_string()).unwrap_or_default(),
            m.data_unc_mean.to_string(),
            m.model_unc_mean.to_string(),
        ],
        None => vec![String::new(); 7],
    };
    out.push(status.into());
    out
}

fn header(first: &[&str]) -> Vec<String> {
    first.iter().chain(&METRIC_COLUMNS).map(|s| s.to_string()).collect()
}

/// Which uncertainty component has the larger mean pixel value.
pub fn dominant_component(m: &MetricsRecord) -> &'static str {
    if m.data_unc_mean > m.model_unc_mean {
        "data"
    } else if m.model_unc_mean > m.data_unc_mean {
        "model"
    } else {
        "neither"
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
}

pub fn build_report(manifest: &Manifest) -> Result<Report> {
    if manifest.cells.is_empty() {
        return Err(Error::Report("manifest contains no cells".into()));
    }
    let cfg = &manifest.config;
    let (ratios, snrs, liks) = (&cfg.sensing.compression_ratios, &cfg.sensing.snr_db, &cfg.network.likelihoods);

    let mut compression_trends = Vec::new();
    let mut comparison = Vec::new();
    for &snr in snrs {
        for &lik in liks {
            let rows = ratios
                .iter()
                .map(|&c| {
                    let mut r = vec![c.to_string()];
                    r.extend(metric_fields(manifest.cell(c, snr, lik)));
                    r
                })
                .collect();
            compression_trends.push(Table {
                name: format!("compression_trend_{}_snr_{snr}db", name(lik)),
                header: header(&["compression"]),
                rows,
            });
        }
        let mut rows = Vec::new();
        for &c in ratios {
            for &lik in liks {
                let (status, m) = status_of(manifest.cell(c, snr, lik));
                let f = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
                rows.push(vec![
                    format!("{c}X"),
                    name(lik).to_string(),
                    f(m.map(|m| m.mae_mean)),
                    f(m.map(|m| m.ssim_mean)),
                    f(m.and_then(|m| m.r2_mean)),
                    status.to_string(),
                ]);
            }
        }
        comparison.push(Table {
            name: format!("likelihood_table_snr_{snr}db"),
            header: ["compression", "likelihood", "mae", "ssim", "r2", "status"].map(String::from).to_vec(),
            rows,
        });
    }

    let mut snr_trends = Vec::new();
    if snrs.len() > 1 {
        let mut sorted = snrs.clone();
        sorted.sort_by(f64::total_cmp);
        for &c in ratios {
            for &lik in liks {
                let rows = sorted
                    .iter()
                    .map(|&snr| {
                        let mut r = vec![snr.to_string()];
                        r.extend(metric_fields(manifest.cell(c, snr, lik)));
                        r
                    })
                    .collect();
                snr_trends.push(Table {
                    name: format!("snr_trend_{c}x_{}", name(lik)),
                    header: header(&["snr_db"]),
                    rows,
                });
            }
        }
    }

    let mut summary = String::new();
    let mut gaps = 0;
    let _ = writeln!(summary, "dataset {} ({} test images), config {}", manifest.dataset.name, manifest.dataset.test.len(), manifest.config_hash);
    for &snr in snrs {
        for &c in ratios {
            let input = manifest.group(c, snr).and_then(|g| g.input);
            let _ = writeln!(
                summary,
                "\n{c}X at {snr} dB: LSQR input MAE {} SSIM {}",
                fmt_opt(input.map(|i| i.mae_mean)),
                fmt_opt(input.map(|i| i.ssim_mean))
            );
            for &lik in liks {
                let cell = manifest.cell(c, snr, lik);
                let line = match status_of(cell) {
                    (_, Some(m)) => format!(
                        "MAE {:.4} SSIM {:.4} R2 {}  data {:.4} model {:.4}  dominant: {}",
                        m.mae_mean,
                        m.ssim_mean,
                        fmt_opt(m.r2_mean),
                        m.data_unc_mean,
                        m.model_unc_mean,
                        dominant_component(m)
                    ),
                    (status, None) => {
                        gaps += 1;
                        match cell.and_then(|c| c.error.as_deref()) {
                            Some(e) => format!("GAP ({status}: {e})"),
                            None => format!("GAP ({status})"),
                        }
                    }
                };
                let _ = writeln!(summary, "  {:<10} {line}", name(lik));
            }
        }
    }
    if gaps > 0 {
        let _ = writeln!(summary, "\n{gaps} grid cell(s) without results");
    }
    Ok(Report { compression_trends, snr_trends, comparison, summary, gaps })
}

/// Plain-text rendering of a likelihood comparison table with aligned columns.
pub fn render_text(table: &Table) -> String {
    let fmt = |s: &str| match s.parse::<f64>() {
        Ok(v) if s.contains('.') || s.contains('e') => format!("{v:.4}"),
        _ if s.is_empty() => "-".into(),
        _ => s.to_string(),
    };
    let cells: Vec<Vec<String>> = std::iter::once(table.header.clone())
        .chain(table.rows.iter().map(|r| r.iter().map(|s| fmt(s)).collect()))
        .collect();
    let widths: Vec<usize> =
        (0..table.header.len()).map(|j| cells.iter().map(|r| r[j].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in &cells {
        let line: Vec<String> = r.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Writes every table of [`build_report`] plus `summary.txt` into `dir`; returns the paths written.
pub fn emit_report(manifest: &Manifest, dir: &Path) -> Result<(Report, Vec<PathBuf>)> {
    let report = build_report(manifest)?;
    let mut written = Vec::new();
    let mut put = |name: String, text: &str| -> Result<()> {
        let path = dir.join(name);
        files::write(&path, text.as_bytes())?;
        written.push(path);
        Ok(())
    };
    for t in report.compression_trends.iter().chain(&report.snr_trends) {
        put(format!("{}.csv", t.name), &t.to_csv())?;
    }
    for t in &report.comparison {
        put(format!("{}.csv", t.name), &t.to_csv())?;
        put(format!("{}.txt", t.name), &render_text(t))?;
    }
    put("summary.txt".into(), &report.summary)?;
    Ok((report, written))
}
