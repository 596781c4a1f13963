//! Metrics persistence: fixed-schema CSV tables plus a rerunnable manifest.
//!
//! One file per table kind per run. Every float is written with Rust's
//! shortest-roundtrip formatting, so identical runs produce identical bytes;
//! the wall-clock columns are the only nondeterministic fields and
//! [`normalized_bytes`] masks them for byte comparisons.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use crest_core::trainer::RunMetrics;

use crate::config::{render_config, ExperimentConfig};

pub const INTERVALS_HEADER: &str =
    "iter,t1,p,rho,refreshed,active_n,loss_vr,acc_vr,grad_queries_cum,wall_ms_cum";
pub const UPDATES_HEADER: &str = "iter,t1,p,rho_trigger,hnorm_ratio,union_size";
pub const DIAGNOSTICS_HEADER: &str = "iter,estimator,bias,variance,normalized_bias";
pub const FINAL_HEADER: &str =
    "method,seed,final_loss,final_acc,updates_total,grad_queries_total,wall_ms_total";

/// Table kinds a run directory contains.
pub const TABLE_FILES: &[(&str, &str)] = &[
    ("intervals.csv", INTERVALS_HEADER),
    ("updates.csv", UPDATES_HEADER),
    ("diagnostics.csv", DIAGNOSTICS_HEADER),
    ("final.csv", FINAL_HEADER),
];

pub const MANIFEST_FILE: &str = "manifest.txt";

fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

pub fn intervals_csv(metrics: &RunMetrics) -> String {
    let mut out = String::from(INTERVALS_HEADER);
    out.push('\n');
    for r in &metrics.intervals {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.iter,
            r.t1,
            r.p,
            fmt_float(r.rho),
            u8::from(r.refreshed),
            r.active_n,
            fmt_float(r.loss_vr),
            fmt_float(r.acc_vr),
            r.grad_queries_cum,
            r.wall_ms_cum
        )
        .unwrap();
    }
    out
}

pub fn updates_csv(metrics: &RunMetrics) -> String {
    let mut out = String::from(UPDATES_HEADER);
    out.push('\n');
    for r in &metrics.updates {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.iter,
            r.t1,
            r.p,
            fmt_float(r.rho_trigger),
            fmt_float(r.hnorm_ratio),
            r.union_size
        )
        .unwrap();
    }
    out
}

pub fn diagnostics_csv(metrics: &RunMetrics) -> String {
    let mut out = String::from(DIAGNOSTICS_HEADER);
    out.push('\n');
    for r in &metrics.diagnostics {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.iter,
            r.estimator,
            fmt_opt(r.bias),
            fmt_opt(r.variance),
            fmt_opt(r.normalized_bias)
        )
        .unwrap();
    }
    out
}

pub fn final_csv(metrics: &RunMetrics) -> String {
    let mut out = String::from(FINAL_HEADER);
    out.push('\n');
    writeln!(
        out,
        "{},{},{},{},{},{},{}",
        metrics.method,
        metrics.seed,
        fmt_float(metrics.final_loss),
        fmt_float(metrics.final_acc),
        metrics.updates_total,
        metrics.grad_queries_total,
        metrics.wall_ms_total
    )
    .unwrap();
    out
}

/// Write the four metrics tables plus the manifest into `dir`.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, metrics: &RunMetrics) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    std::fs::write(dir.join("intervals.csv"), intervals_csv(metrics))?;
    std::fs::write(dir.join("updates.csv"), updates_csv(metrics))?;
    std::fs::write(dir.join("diagnostics.csv"), diagnostics_csv(metrics))?;
    std::fs::write(dir.join("final.csv"), final_csv(metrics))?;
    let manifest = format!(
        "# run manifest: rerunnable config echo\n# version = {}\n{}",
        env!("CARGO_PKG_VERSION"),
        render_config(cfg)
    );
    std::fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(())
}

/// Parsed final.csv row.
#[derive(Debug, Clone)]
pub struct FinalRow {
    pub method: String,
    pub seed: u64,
    pub final_loss: f64,
    pub final_acc: f64,
    pub updates_total: u64,
    pub grad_queries_total: u64,
    pub wall_ms_total: u64,
}

fn split_csv_line(line: &str) -> Vec<&str> {
    line.split(',').collect()
}

/// Validate that every table file in a run directory carries its expected
/// header and column count.
pub fn validate_run_dir(dir: &Path) -> Result<()> {
    for (file, header) in TABLE_FILES {
        let path = dir.join(file);
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let mut lines = text.lines();
        let first = lines
            .next()
            .ok_or_else(|| anyhow!("{}: empty file", path.display()))?;
        if first != *header {
            bail!(
                "{}: schema mismatch\n  expected: {header}\n  found:    {first}",
                path.display()
            );
        }
        let n_cols = split_csv_line(header).len();
        for (i, line) in lines.enumerate() {
            if split_csv_line(line).len() != n_cols {
                bail!("{}: row {} has wrong column count", path.display(), i + 2);
            }
        }
    }
    Ok(())
}

/// Read the single summary row of final.csv.
pub fn read_final(dir: &Path) -> Result<FinalRow> {
    let path = dir.join("final.csv");
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != FINAL_HEADER {
        bail!("{}: schema mismatch", path.display());
    }
    let row = lines
        .next()
        .ok_or_else(|| anyhow!("{}: missing data row", path.display()))?;
    let fields = split_csv_line(row);
    if fields.len() != 7 {
        bail!("{}: malformed final row", path.display());
    }
    let parse_f = |s: &str| -> f64 { s.parse().unwrap_or(f64::NAN) };
    Ok(FinalRow {
        method: fields[0].to_string(),
        seed: fields[1].parse().context("bad seed")?,
        final_loss: parse_f(fields[2]),
        final_acc: parse_f(fields[3]),
        updates_total: fields[4].parse().context("bad updates_total")?,
        grad_queries_total: fields[5].parse().context("bad grad_queries_total")?,
        wall_ms_total: fields[6].parse().context("bad wall_ms_total")?,
    })
}

/// File bytes with wall-clock columns zeroed, for byte-identity checks
/// between runs (timestamps are the only nondeterministic fields).
pub fn normalized_bytes(path: &Path) -> Result<Vec<u8>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default();
    let wall_col: Option<usize> = match name {
        "intervals.csv" => Some(9),
        "final.csv" => Some(6),
        _ => None,
    };
    let Some(col) = wall_col else {
        return Ok(text.into_bytes());
    };
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            out.push_str(line);
        } else {
            let mut fields: Vec<&str> = split_csv_line(line);
            if col < fields.len() {
                fields[col] = "0";
            }
            out.push_str(&fields.join(","));
        }
        out.push('\n');
    }
    Ok(out.into_bytes())
}

/// All run-directory files as normalized bytes, concatenated in a fixed
/// order (manifest excluded).
pub fn normalized_run_bytes(dir: &Path) -> Result<Vec<u8>> {
    let mut all = Vec::new();
    for (file, _) in TABLE_FILES {
        all.extend_from_slice(&normalized_bytes(&dir.join(file))?);
    }
    Ok(all)
}

/// Output directory used when the config does not name one.
pub fn default_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    PathBuf::from(format!("runs/{}-seed{}", cfg.method.name(), cfg.seed))
}
