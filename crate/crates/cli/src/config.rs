//! Line-based experiment configuration: `key = value`, `#` comments, dotted
//! keys for nesting. Unknown keys and malformed lines are rejected with the
//! offending line number.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Result};
use crest_core::models::SyntheticSpec;
use crest_core::quadmodel::EmaScope;
use crest_core::trainer::TrainerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Crest,
    Random,
    EpochCoreset,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Crest => "crest",
            Method::Random => "random",
            Method::EpochCoreset => "epoch-coreset",
        }
    }
}

#[derive(Debug, Clone)]
pub enum DatasetSource {
    Synthetic { spec: SyntheticSpec, seed: Option<u64> },
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub kind: String,
    pub hidden: usize,
    pub bias: bool,
}

/// A fully parsed experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub method: Method,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetSource,
    pub model: ModelSpec,
    pub trainer: TrainerConfig,
    /// Coreset fraction for the epoch-coreset baseline.
    pub epoch_fraction: f64,
    /// Run the estimator bias/variance study at the final parameters.
    pub diag_estimators: bool,
    pub diag_trials: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Crest,
            seed: 0,
            out_dir: None,
            dataset: DatasetSource::Synthetic {
                spec: SyntheticSpec::balanced(2000, 10, 4, 0.15),
                seed: None,
            },
            model: ModelSpec {
                kind: "softmax-regression".into(),
                hidden: 16,
                bias: false,
            },
            trainer: TrainerConfig::default(),
            epoch_fraction: 0.1,
            diag_estimators: false,
            diag_trials: 2000,
        }
    }
}

/// Every key the parser understands, in documentation order.
pub const KNOWN_KEYS: &[&str] = &[
    "method",
    "seed",
    "out",
    "dataset.source",
    "dataset.path",
    "dataset.n",
    "dataset.dim",
    "dataset.classes",
    "dataset.spread",
    "dataset.imbalance",
    "dataset.noise",
    "dataset.seed",
    "model.kind",
    "model.hidden",
    "model.bias",
    "trainer.batch",
    "trainer.subset",
    "trainer.pool",
    "trainer.tau",
    "trainer.alpha",
    "trainer.h",
    "trainer.b",
    "trainer.t2",
    "trainer.eta",
    "trainer.momentum",
    "trainer.iterations",
    "trainer.warmup",
    "trainer.beta1",
    "trainer.beta2",
    "trainer.ema-scope",
    "trainer.hutchinson",
    "trainer.redraw-hutchinson",
    "epoch.fraction",
    "diagnostics.bias-at-refresh",
    "diagnostics.estimators",
    "diagnostics.trials",
];

struct RawConfig {
    entries: Vec<(String, String, usize)>,
}

fn parse_lines(text: &str) -> Result<RawConfig> {
    let mut entries = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {lineno}: expected `key = value`, found `{line}`"))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            bail!("line {lineno}: unknown key `{key}`");
        }
        if value.is_empty() {
            bail!("line {lineno}: empty value for `{key}`");
        }
        entries.push((key, value, lineno));
    }
    Ok(RawConfig { entries })
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, lineno: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| anyhow!("line {lineno}: bad value `{value}` for `{key}`"))
}

fn parse_bool(key: &str, value: &str, lineno: usize) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("line {lineno}: bad boolean `{value}` for `{key}`"),
    }
}

/// Parse a config file. `path` is used for error context only.
pub fn parse_config(text: &str, path: &Path) -> Result<ExperimentConfig> {
    let raw = parse_lines(text)
        .map_err(|e| anyhow!("{}: {e}", path.display()))?;

    let mut cfg = ExperimentConfig::default();
    let mut synthetic = SyntheticSpec::balanced(2000, 10, 4, 0.15);
    let mut imbalance_set = false;
    let mut dataset_seed: Option<u64> = None;
    let mut source: Option<String> = None;
    let mut dataset_path: Option<PathBuf> = None;
    let mut method: Option<Method> = None;
    let mut pool_set = false;

    for (key, value, lineno) in &raw.entries {
        let (key, value, lineno) = (key.as_str(), value.as_str(), *lineno);
        match key {
            "method" => {
                method = Some(match value {
                    "crest" => Method::Crest,
                    "random" => Method::Random,
                    "epoch-coreset" => Method::EpochCoreset,
                    _ => bail!("line {lineno}: unknown method `{value}`"),
                })
            }
            "seed" => cfg.seed = parse_value(key, value, lineno)?,
            "out" => cfg.out_dir = Some(PathBuf::from(value)),
            "dataset.source" => source = Some(value.to_string()),
            "dataset.path" => dataset_path = Some(PathBuf::from(value)),
            "dataset.n" => synthetic.n = parse_value(key, value, lineno)?,
            "dataset.dim" => synthetic.dim = parse_value(key, value, lineno)?,
            "dataset.classes" => synthetic.n_classes = parse_value(key, value, lineno)?,
            "dataset.spread" => synthetic.spread = parse_value(key, value, lineno)?,
            "dataset.imbalance" => {
                synthetic.imbalance = parse_value(key, value, lineno)?;
                imbalance_set = true;
            }
            "dataset.noise" => synthetic.noise_fraction = parse_value(key, value, lineno)?,
            "dataset.seed" => dataset_seed = Some(parse_value(key, value, lineno)?),
            "model.kind" => {
                if value != "softmax-regression" && value != "two-layer-mlp" {
                    bail!("line {lineno}: unknown model kind `{value}`");
                }
                cfg.model.kind = value.to_string();
            }
            "model.hidden" => cfg.model.hidden = parse_value(key, value, lineno)?,
            "model.bias" => cfg.model.bias = parse_bool(key, value, lineno)?,
            "trainer.batch" => cfg.trainer.batch_size = parse_value(key, value, lineno)?,
            "trainer.subset" => cfg.trainer.subset_size = Some(parse_value(key, value, lineno)?),
            "trainer.pool" => {
                cfg.trainer.initial_pool = parse_value(key, value, lineno)?;
                pool_set = true;
            }
            "trainer.tau" => {
                cfg.trainer.validity_threshold = if value == "inf" {
                    f64::INFINITY
                } else {
                    parse_value(key, value, lineno)?
                }
            }
            "trainer.alpha" => cfg.trainer.drop_threshold = parse_value(key, value, lineno)?,
            "trainer.h" => cfg.trainer.interval_multiplier = parse_value(key, value, lineno)?,
            "trainer.b" => cfg.trainer.pool_multiplier = parse_value(key, value, lineno)?,
            "trainer.t2" => cfg.trainer.drop_interval = parse_value(key, value, lineno)?,
            "trainer.eta" => cfg.trainer.learning_rate = parse_value(key, value, lineno)?,
            "trainer.momentum" => cfg.trainer.momentum = parse_value(key, value, lineno)?,
            "trainer.iterations" => {
                cfg.trainer.total_iterations = parse_value(key, value, lineno)?
            }
            "trainer.warmup" => cfg.trainer.warmup_frac = parse_value(key, value, lineno)?,
            "trainer.beta1" => cfg.trainer.beta1 = parse_value(key, value, lineno)?,
            "trainer.beta2" => cfg.trainer.beta2 = parse_value(key, value, lineno)?,
            "trainer.ema-scope" => {
                cfg.trainer.ema_scope = match value {
                    "lazy" => EmaScope::Lazy,
                    "coreset-aggregate" => EmaScope::CoresetAggregate,
                    _ => bail!("line {lineno}: unknown ema scope `{value}`"),
                }
            }
            "trainer.hutchinson" => cfg.trainer.num_hutchinson = parse_value(key, value, lineno)?,
            "trainer.redraw-hutchinson" => {
                cfg.trainer.redraw_hutchinson = parse_bool(key, value, lineno)?
            }
            "epoch.fraction" => cfg.epoch_fraction = parse_value(key, value, lineno)?,
            "diagnostics.bias-at-refresh" => {
                cfg.trainer.measure_bias_at_refresh = parse_bool(key, value, lineno)?
            }
            "diagnostics.estimators" => cfg.diag_estimators = parse_bool(key, value, lineno)?,
            "diagnostics.trials" => cfg.diag_trials = parse_value(key, value, lineno)?,
            _ => unreachable!("key validated against KNOWN_KEYS"),
        }
    }

    cfg.method = method.ok_or_else(|| anyhow!("missing required field `method`"))?;
    let source = source.ok_or_else(|| anyhow!("missing required field `dataset.source`"))?;
    cfg.dataset = match source.as_str() {
        "synthetic" => {
            if !imbalance_set {
                synthetic.imbalance = 1.0 / synthetic.n_classes as f64;
            }
            DatasetSource::Synthetic {
                spec: synthetic,
                seed: dataset_seed,
            }
        }
        "file" => DatasetSource::File(
            dataset_path.ok_or_else(|| anyhow!("missing required field `dataset.path`"))?,
        ),
        _ => bail!("unknown dataset source `{source}`"),
    };
    if let Some(subset) = cfg.trainer.subset_size {
        if subset < cfg.trainer.batch_size {
            bail!(
                "trainer.subset ({subset}) must be at least trainer.batch ({})",
                cfg.trainer.batch_size
            );
        }
    }
    // The initial pool follows the pool multiplier unless set explicitly
    // (the first interval has unit length, so the P = b * T1 rule gives b).
    if !pool_set {
        cfg.trainer.initial_pool = (cfg.trainer.pool_multiplier.round() as usize).max(1);
    }
    cfg.trainer.seed = cfg.seed;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow!("cannot read config {}: {e}", path.display()))?;
    parse_config(&text, path)
}

fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        "inf".into()
    } else {
        format!("{x}")
    }
}

/// Render a config in the same `key = value` format the parser reads, so a
/// manifest echo is itself a runnable config.
pub fn render_config(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    let mut push = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
    push("method", cfg.method.name().into());
    push("seed", cfg.seed.to_string());
    match &cfg.dataset {
        DatasetSource::Synthetic { spec, seed } => {
            push("dataset.source", "synthetic".into());
            push("dataset.n", spec.n.to_string());
            push("dataset.dim", spec.dim.to_string());
            push("dataset.classes", spec.n_classes.to_string());
            push("dataset.spread", fmt_f64(spec.spread));
            push("dataset.imbalance", fmt_f64(spec.imbalance));
            push("dataset.noise", fmt_f64(spec.noise_fraction));
            if let Some(s) = seed {
                push("dataset.seed", s.to_string());
            }
        }
        DatasetSource::File(path) => {
            push("dataset.source", "file".into());
            push("dataset.path", path.display().to_string());
        }
    }
    push("model.kind", cfg.model.kind.clone());
    push("model.hidden", cfg.model.hidden.to_string());
    push("model.bias", cfg.model.bias.to_string());
    let t = &cfg.trainer;
    push("trainer.batch", t.batch_size.to_string());
    if let Some(r) = t.subset_size {
        push("trainer.subset", r.to_string());
    }
    // Omitted at its derived default (round(b)) so overrides of trainer.b
    // re-derive the initial pool on re-parse.
    if t.initial_pool != (t.pool_multiplier.round() as usize).max(1) {
        push("trainer.pool", t.initial_pool.to_string());
    }
    push("trainer.tau", fmt_f64(t.validity_threshold));
    push("trainer.alpha", fmt_f64(t.drop_threshold));
    push("trainer.h", fmt_f64(t.interval_multiplier));
    push("trainer.b", fmt_f64(t.pool_multiplier));
    push("trainer.t2", t.drop_interval.to_string());
    push("trainer.eta", fmt_f64(t.learning_rate));
    push("trainer.momentum", fmt_f64(t.momentum));
    push("trainer.iterations", t.total_iterations.to_string());
    push("trainer.warmup", fmt_f64(t.warmup_frac));
    push("trainer.beta1", fmt_f64(t.beta1));
    push("trainer.beta2", fmt_f64(t.beta2));
    push(
        "trainer.ema-scope",
        match t.ema_scope {
            EmaScope::Lazy => "lazy".into(),
            EmaScope::CoresetAggregate => "coreset-aggregate".into(),
        },
    );
    push("trainer.hutchinson", t.num_hutchinson.to_string());
    push("trainer.redraw-hutchinson", t.redraw_hutchinson.to_string());
    push("epoch.fraction", fmt_f64(cfg.epoch_fraction));
    push(
        "diagnostics.bias-at-refresh",
        t.measure_bias_at_refresh.to_string(),
    );
    push("diagnostics.estimators", cfg.diag_estimators.to_string());
    push("diagnostics.trials", cfg.diag_trials.to_string());
    out
}

/// Apply one `key = value` override (used by sweeps).
pub fn apply_override(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    if !KNOWN_KEYS.contains(&key) {
        bail!("unknown parameter `{key}`");
    }
    let rendered = render_config(cfg);
    let mut replaced = String::new();
    let mut found = false;
    for line in rendered.lines() {
        if line.starts_with(&format!("{key} = ")) {
            replaced.push_str(&format!("{key} = {value}\n"));
            found = true;
        } else {
            replaced.push_str(line);
            replaced.push('\n');
        }
    }
    if !found {
        replaced.push_str(&format!("{key} = {value}\n"));
    }
    *cfg = parse_config(&replaced, Path::new("<override>"))?;
    Ok(())
}
