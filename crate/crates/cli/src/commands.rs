//! Subcommand implementations. Exit-code policy: 0 success, 1 runtime
//! failure, 2 usage or configuration error.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use crest_core::models::{generate_synthetic, load_dataset, Dataset, ModelHandle};
use crest_core::numerics::SeededRng;
use crest_core::trainer::{
    gradient_estimator_diagnostics, run_crest, run_epoch_coreset_baseline, run_random_baseline,
    DiagnosticRecord, GradientEstimator, RunMetrics,
};

use crate::config::{
    apply_override, load_config, DatasetSource, ExperimentConfig, Method, KNOWN_KEYS,
};
use crate::outputs::{default_out_dir, read_final, validate_run_dir, write_run};
use crate::selftest;

/// Errors tagged with the exit code they should produce.
#[derive(Debug)]
pub enum CliError {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Usage(e) | CliError::Runtime(e) => format!("{e:#}"),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(e: anyhow::Error) -> CliResult<T> {
    Err(CliError::Usage(e))
}

fn runtime(e: anyhow::Error) -> CliError {
    CliError::Runtime(e)
}

/// Print without panicking when stdout is a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let _ = write!(std::io::stdout(), "{text}");
}

/// Overrides shared by all subcommands.
#[derive(Debug, Clone, Default)]
pub struct GlobalFlags {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub quiet: bool,
}

pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetSource::Synthetic { spec, seed } => {
            let seed = seed.unwrap_or(cfg.seed);
            generate_synthetic(spec, seed).map_err(|e| anyhow!("synthetic dataset: {e}"))
        }
        DatasetSource::File(path) => {
            load_dataset(path).map_err(|e| anyhow!("dataset {}: {e}", path.display()))
        }
    }
}

pub fn build_model(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<ModelHandle> {
    let model = match cfg.model.kind.as_str() {
        "softmax-regression" => {
            ModelHandle::softmax_regression(dataset.input_dim(), dataset.n_classes())
        }
        "two-layer-mlp" => ModelHandle::two_layer_mlp(
            dataset.input_dim(),
            cfg.model.hidden,
            dataset.n_classes(),
        ),
        other => bail!("unknown model kind `{other}`"),
    };
    Ok(model.with_bias(cfg.model.bias))
}

/// Execute the configured experiment and return its metrics.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunMetrics> {
    let dataset = build_dataset(cfg)?;
    let model = build_model(cfg, &dataset)?;
    let mut metrics = match cfg.method {
        Method::Crest => run_crest(&cfg.trainer, &model, &dataset)?,
        Method::Random => run_random_baseline(&cfg.trainer, &model, &dataset)?,
        Method::EpochCoreset => {
            run_epoch_coreset_baseline(&cfg.trainer, &model, &dataset, cfg.epoch_fraction)?
        }
    };
    if cfg.diag_estimators {
        append_estimator_study(cfg, &model, &dataset, &mut metrics)?;
    }
    Ok(metrics)
}

/// Bias/variance study of the standard estimator set at the final
/// parameters.
fn append_estimator_study(
    cfg: &ExperimentConfig,
    model: &ModelHandle,
    dataset: &Dataset,
    metrics: &mut RunMetrics,
) -> Result<()> {
    let resolved = cfg.trainer.resolve(dataset.len())?;
    let (m, r) = (resolved.batch_size, resolved.subset_size);
    let estimators = [
        GradientEstimator::RandomBatch { m },
        GradientEstimator::RandomBatch { m: r },
        GradientEstimator::MiniBatchCoreset { m, r },
        GradientEstimator::EpochCoresetBatch {
            fraction: cfg.epoch_fraction,
            m,
        },
    ];
    let w = metrics.final_params.clone();
    let iter = cfg.trainer.total_iterations;
    for (i, estimator) in estimators.iter().enumerate() {
        let mut rng = SeededRng::new(cfg.seed).derive(0xD1A6).derive(i as u64);
        let diag = gradient_estimator_diagnostics(
            model,
            &w,
            dataset,
            estimator,
            cfg.diag_trials,
            &mut rng,
        )?;
        metrics.diagnostics.push(DiagnosticRecord {
            iter,
            estimator: estimator.name(),
            bias: Some(diag.bias),
            variance: Some(diag.variance),
            normalized_bias: None,
        });
    }
    Ok(())
}

/// `run <config>`: execute one experiment and persist its outputs.
pub fn cmd_run(config_path: &Path, flags: &GlobalFlags) -> CliResult<PathBuf> {
    let mut cfg = match load_config(config_path) {
        Ok(cfg) => cfg,
        Err(e) => return usage(e),
    };
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
        cfg.trainer.seed = seed;
    }
    if let Some(out) = &flags.out {
        cfg.out_dir = Some(out.clone());
    }
    let out_dir = cfg.out_dir.clone().unwrap_or_else(|| default_out_dir(&cfg));
    let metrics = execute(&cfg).map_err(runtime)?;
    write_run(&out_dir, &cfg, &metrics).map_err(runtime)?;
    if !flags.quiet {
        emit(&format!(
            "{} seed={} iters={} final_loss={:.6} final_acc={:.4} updates={} grad_queries={} -> {}\n",
            metrics.method,
            metrics.seed,
            cfg.trainer.total_iterations,
            metrics.final_loss,
            metrics.final_acc,
            metrics.updates_total,
            metrics.grad_queries_total,
            out_dir.display()
        ));
    }
    Ok(out_dir)
}

/// `compare <ref> <dir>...`: summary table with relative error against the
/// reference run's accuracy.
pub fn cmd_compare(ref_dir: &Path, dirs: &[PathBuf], quiet: bool) -> CliResult<String> {
    for dir in std::iter::once(&ref_dir.to_path_buf()).chain(dirs) {
        validate_run_dir(dir).map_err(runtime)?;
    }
    let reference = read_final(ref_dir).map_err(runtime)?;
    let mut out = String::from(
        "dir,method,seed,final_loss,final_acc,rel_err_acc_pct,updates_total,grad_queries_total\n",
    );
    let mut row = |dir: &Path, f: &crate::outputs::FinalRow| {
        let rel = if reference.final_acc != 0.0 {
            100.0 * (f.final_acc - reference.final_acc).abs() / reference.final_acc
        } else {
            f64::NAN
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            dir.display(),
            f.method,
            f.seed,
            f.final_loss,
            f.final_acc,
            rel,
            f.updates_total,
            f.grad_queries_total
        ));
    };
    row(ref_dir, &reference);
    for dir in dirs {
        let f = read_final(dir).map_err(runtime)?;
        row(dir, &f);
    }
    if !quiet {
        emit(&out);
    }
    Ok(out)
}

/// `sweep <config> <param> <values>...`: one run per value with derived
/// seeds, aggregated into sweep.csv.
pub fn cmd_sweep(
    config_path: &Path,
    param: &str,
    values: &[String],
    flags: &GlobalFlags,
) -> CliResult<PathBuf> {
    if !KNOWN_KEYS.contains(&param) {
        return usage(anyhow!("unknown parameter `{param}`"));
    }
    if values.is_empty() {
        return usage(anyhow!("sweep needs at least one value"));
    }
    let base = match load_config(config_path) {
        Ok(cfg) => cfg,
        Err(e) => return usage(e),
    };
    let base_seed = flags.seed.unwrap_or(base.seed);
    let sweep_root = flags
        .out
        .clone()
        .or_else(|| base.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs/sweep"));

    let mut summary = String::from("param,value,dir,method,seed,final_loss,final_acc,updates_total,grad_queries_total\n");
    for (i, value) in values.iter().enumerate() {
        let mut cfg = base.clone();
        if let Err(e) = apply_override(&mut cfg, param, value) {
            return usage(e);
        }
        // Derived seed: base for the first value, then successors, so a
        // single-value sweep reproduces a plain run exactly.
        cfg.seed = base_seed.wrapping_add(i as u64);
        cfg.trainer.seed = cfg.seed;
        let dir = sweep_root.join(format!(
            "{}-{}",
            param.replace('.', "-"),
            value.replace(['/', ' '], "_")
        ));
        cfg.out_dir = Some(dir.clone());
        let metrics = execute(&cfg).map_err(runtime)?;
        write_run(&dir, &cfg, &metrics).map_err(runtime)?;
        summary.push_str(&format!(
            "{param},{value},{},{},{},{},{},{},{}\n",
            dir.display(),
            metrics.method,
            metrics.seed,
            metrics.final_loss,
            metrics.final_acc,
            metrics.updates_total,
            metrics.grad_queries_total
        ));
        if !flags.quiet {
            emit(&format!(
                "{param}={value} seed={} final_loss={:.6} final_acc={:.4}\n",
                metrics.seed, metrics.final_loss, metrics.final_acc
            ));
        }
    }
    std::fs::create_dir_all(&sweep_root)
        .and_then(|_| std::fs::write(sweep_root.join("sweep.csv"), &summary))
        .context("writing sweep summary")
        .map_err(runtime)?;
    Ok(sweep_root)
}

/// `selftest`: fast invariant suite, one pass/fail line per property.
pub fn cmd_selftest(inject: Option<&str>, quiet: bool) -> CliResult<()> {
    let report = selftest::run(inject);
    if !quiet {
        for line in &report.lines {
            emit(&format!("{line}\n"));
        }
    }
    if report.failed == 0 {
        Ok(())
    } else {
        Err(runtime(anyhow!(
            "{} of {} self-test properties failed",
            report.failed,
            report.total
        )))
    }
}
