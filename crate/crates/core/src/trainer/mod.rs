//! The adaptive coreset training loop and its baselines.
//!
//! One outer cycle: select a pool of mini-batch coresets from random subsets
//! of the active set, fit the quadratic surrogate at the anchor, train for an
//! interval on pool batches, then compare the surrogate against the loss on
//! a fresh probe subset. Drift past the validity threshold triggers
//! reselection with the interval and pool sizes rescaled by the inverse
//! curvature-norm ratio. Examples whose probed losses stay under the drop
//! threshold for a whole window leave the ground set.

pub mod baselines;
pub mod diagnostics;
pub mod metrics;
mod pool;

pub use baselines::{run_epoch_coreset_baseline, run_random_baseline};
pub use diagnostics::{
    gradient_estimator_diagnostics, normalized_bias, EstimatorDiagnostics, ForgettingTracker,
    GradientEstimator, NormalizedBias,
};
pub use metrics::{DiagnosticRecord, DroppedExample, IntervalRecord, RunMetrics, UpdateRecord};
pub use pool::{select_pool, CoresetPool, MiniBatchCoreset, SelectionOutcome};

use std::time::Instant;

use crate::models::{batch_weighted_grad, Dataset, Model};
use crate::numerics::{axpy, SeededRng};
use crate::quadmodel::{build_surrogate, rho, EmaScope, EmaStats, SurrogateSettings};
use crate::{invalid, Result};

// Stream indices for deriving independent RNGs from the run seed.
pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_SELECTION: u64 = 2;
pub(crate) const STREAM_POOL: u64 = 3;
pub(crate) const STREAM_PROBE: u64 = 4;
pub(crate) const STREAM_BATCH: u64 = 5;
pub(crate) const STREAM_HUTCH: u64 = 6;

/// Schedule and smoothing knobs for all trainers.
#[derive(Debug, Clone)]
pub struct TrainerConfig {
    /// Mini-batch size m.
    pub batch_size: usize,
    /// Random-subset (and probe) size r; defaults to
    /// `max(batch_size, ceil(0.01 n))`.
    pub subset_size: Option<usize>,
    /// Pool size before the first refresh.
    pub initial_pool: usize,
    /// Validity threshold on the surrogate/loss ratio; refresh above it.
    /// Infinity means never refresh.
    pub validity_threshold: f64,
    /// Loss level below which an example counts as learned.
    pub drop_threshold: f64,
    /// Multiplier on the curvature ratio for the next interval length.
    pub interval_multiplier: f64,
    /// Pool size per unit of interval length.
    pub pool_multiplier: f64,
    /// Window length (iterations) for drop decisions and baseline probes.
    pub drop_interval: u64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub total_iterations: u64,
    /// Fraction of the run spent ramping the learning rate up linearly.
    pub warmup_frac: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub ema_scope: EmaScope,
    pub num_hutchinson: usize,
    /// Redraw Hutchinson probes at every build (true) or reuse one frozen
    /// probe sequence (false).
    pub redraw_hutchinson: bool,
    /// Record pool-level normalized bias at every selection event.
    pub measure_bias_at_refresh: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            subset_size: None,
            initial_pool: 5,
            validity_threshold: 0.05,
            drop_threshold: 0.1,
            interval_multiplier: 1.0,
            pool_multiplier: 5.0,
            drop_interval: 20,
            learning_rate: 0.03,
            momentum: 0.9,
            total_iterations: 2000,
            warmup_frac: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
            ema_scope: EmaScope::Lazy,
            num_hutchinson: 1,
            redraw_hutchinson: true,
            measure_bias_at_refresh: true,
        }
    }
}

/// Config with the subset size resolved against a concrete dataset.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub batch_size: usize,
    pub subset_size: usize,
    pub initial_pool: usize,
}

impl TrainerConfig {
    pub fn resolve(&self, n_examples: usize) -> Result<ResolvedConfig> {
        if self.batch_size == 0 || self.batch_size > n_examples {
            return Err(invalid(format!(
                "batch size {} out of range 1..={n_examples}",
                self.batch_size
            )));
        }
        let default_r = ((0.01 * n_examples as f64).ceil() as usize).max(self.batch_size);
        let subset_size = self.subset_size.unwrap_or(default_r);
        if subset_size < self.batch_size || subset_size > n_examples {
            return Err(invalid(format!(
                "subset size {subset_size} must lie in {}..={n_examples}",
                self.batch_size
            )));
        }
        if self.initial_pool == 0 {
            return Err(invalid("initial pool must be >= 1"));
        }
        if self.validity_threshold.is_nan() || self.validity_threshold < 0.0 {
            return Err(invalid("validity threshold must be >= 0"));
        }
        if self.drop_threshold.is_nan() || self.drop_threshold < 0.0 {
            return Err(invalid("drop threshold must be >= 0"));
        }
        for (name, mult) in [
            ("interval", self.interval_multiplier),
            ("pool", self.pool_multiplier),
        ] {
            if mult.is_nan() || mult <= 0.0 {
                return Err(invalid(format!("{name} multiplier must be > 0")));
            }
        }
        if self.drop_interval == 0 {
            return Err(invalid("drop interval must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum must lie in [0, 1)"));
        }
        if self.learning_rate.is_nan() || self.learning_rate < 0.0 {
            return Err(invalid("learning rate must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(invalid("warmup fraction must lie in [0, 1]"));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0 < beta && beta < 1.0) {
                return Err(invalid(format!("{name} must lie in (0, 1)")));
            }
        }
        if self.num_hutchinson == 0 {
            return Err(invalid("hutchinson sample count must be >= 1"));
        }
        Ok(ResolvedConfig {
            batch_size: self.batch_size,
            subset_size,
            initial_pool: self.initial_pool,
        })
    }
}

/// Linear warm-start: ramps to the base rate over the first
/// `warmup_frac * total` iterations, then stays flat.
pub fn warmup_lr(base: f64, warmup_frac: f64, total: u64, t: u64) -> f64 {
    let ramp = warmup_frac * total as f64;
    if ramp < 1.0 {
        return base;
    }
    base * (((t + 1) as f64) / ramp).min(1.0)
}

/// Heavy-ball update: `v <- momentum v + g`, `w <- w - lr v`.
pub fn momentum_step(w: &mut [f64], velocity: &mut [f64], grad: &[f64], lr: f64, momentum: f64) {
    for ((wi, vi), gi) in w.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *vi = momentum * *vi + gi;
        *wi -= lr * *vi;
    }
}

/// Interval/pool rescaling applied on refresh: the interval grows with the
/// inverse curvature-norm ratio, the pool proportionally to the interval.
/// Both floor at 1; the interval is capped at the run length.
pub fn refresh_schedule(
    interval_multiplier: f64,
    pool_multiplier: f64,
    h_norm_first: f64,
    h_norm_now: f64,
    cap: u64,
) -> (u64, usize, f64) {
    let ratio = if h_norm_now > 0.0 {
        h_norm_first / h_norm_now
    } else {
        f64::INFINITY
    };
    let t1 = (interval_multiplier * ratio)
        .round()
        .clamp(1.0, cap.max(1) as f64) as u64;
    let p = (pool_multiplier * t1 as f64).round().max(1.0) as usize;
    (t1, p, ratio)
}

/// Per-example loss observations inside the current (non-overlapping) drop
/// window.
#[derive(Debug, Clone)]
pub struct LossWindows {
    max: Vec<f64>,
    last: Vec<f64>,
    count: Vec<u32>,
}

impl LossWindows {
    pub fn new(n_examples: usize) -> Self {
        Self {
            max: vec![0.0; n_examples],
            last: vec![0.0; n_examples],
            count: vec![0; n_examples],
        }
    }

    pub fn observe(&mut self, example: usize, loss: f64) {
        if self.count[example] == 0 || loss > self.max[example] {
            self.max[example] = loss;
        }
        self.last[example] = loss;
        self.count[example] += 1;
    }

    pub fn reset(&mut self) {
        self.count.fill(0);
    }
}

/// What one drop decision did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropOutcome {
    pub dropped: usize,
    /// The keep-at-least-m guard truncated the candidate list.
    pub guard_hit: bool,
}

/// Deactivate every example whose observations this window all fell below
/// the threshold (strictly), then start a new window. Unobserved examples
/// are retained, and the active set never shrinks below `min_keep`.
pub fn drop_learned(
    dataset: &mut Dataset,
    windows: &mut LossWindows,
    threshold: f64,
    min_keep: usize,
    iter: u64,
    record: &mut Vec<DroppedExample>,
) -> DropOutcome {
    let mut candidates: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.is_active(i) && windows.count[i] > 0 && windows.max[i] < threshold)
        .collect();
    let allowed = dataset.active_count().saturating_sub(min_keep);
    let guard_hit = candidates.len() > allowed;
    if guard_hit {
        // Guard regime: drop the most confidently learned first, keep the
        // rest active.
        candidates.sort_by(|&a, &b| {
            windows.max[a]
                .partial_cmp(&windows.max[b])
                .expect("losses are finite")
                .then(a.cmp(&b))
        });
    }
    candidates.truncate(allowed);
    candidates.sort_unstable();
    for &i in &candidates {
        dataset.deactivate(i);
        record.push(DroppedExample {
            index: i,
            iter,
            loss_at_drop: windows.last[i],
            final_loss: f64::NAN,
        });
    }
    windows.reset();
    DropOutcome {
        dropped: candidates.len(),
        guard_hit,
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Loss and prediction of one example; a single conceptual evaluation.
pub(crate) fn probe_example<M: Model + ?Sized>(
    model: &M,
    w: &[f64],
    dataset: &Dataset,
    idx: usize,
) -> Result<(f64, bool)> {
    let ex = dataset.example(idx);
    let loss = model.loss(w, ex)?;
    let mut probs = model.last_layer_grad(w, ex)?;
    probs[ex.label] += 1.0;
    Ok((loss, argmax(&probs) == ex.label))
}

/// End-of-run full pass: final loss/accuracy over the whole dataset and the
/// final losses of dropped examples. Diagnostic cost, not algorithm budget.
pub(crate) fn finalize<M: Model + ?Sized>(
    mut metrics: RunMetrics,
    model: &M,
    w: &[f64],
    dataset: &Dataset,
    started: Instant,
) -> Result<RunMetrics> {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut per_example = vec![0.0; dataset.len()];
    for (i, slot) in per_example.iter_mut().enumerate() {
        let (loss, ok) = probe_example(model, w, dataset, i)?;
        *slot = loss;
        loss_sum += loss;
        correct += usize::from(ok);
    }
    metrics.diag_queries_total += dataset.len() as u64;
    metrics.final_loss = loss_sum / dataset.len() as f64;
    metrics.final_acc = correct as f64 / dataset.len() as f64;
    metrics.final_params = w.to_vec();
    for d in &mut metrics.dropped {
        d.final_loss = per_example[d.index];
    }
    metrics.wall_ms_total = started.elapsed().as_millis() as u64;
    Ok(metrics)
}

/// Run the adaptive coreset trainer to completion.
pub fn run_crest<M: Model + ?Sized>(
    config: &TrainerConfig,
    model: &M,
    dataset: &Dataset,
) -> Result<RunMetrics> {
    let rc = config.resolve(dataset.len())?;
    let started = Instant::now();
    let mut ds = dataset.clone();
    let root = SeededRng::new(config.seed);
    let mut w = model.init_params(&mut root.derive(STREAM_INIT));
    let mut velocity = vec![0.0; w.len()];
    let mut stats = EmaStats::new(config.beta1, config.beta2, w.len());
    let mut pool_rng = root.derive(STREAM_POOL);
    let hutch_root = root.derive(STREAM_HUTCH);

    let mut metrics = RunMetrics::new("crest", config.seed, ds.len());
    let mut windows = LossWindows::new(ds.len());
    let mut forgetting = ForgettingTracker::new(ds.len());

    let total = config.total_iterations;
    let mut t: u64 = 0;
    let mut interval: u64 = 1;
    let mut pool_count = rc.initial_pool;
    let mut update = true;
    let mut pool: Option<CoresetPool> = None;
    let mut surrogate = None;
    let mut h_norm_first = f64::NAN;
    let mut last_rho = f64::NAN;
    let mut last_ratio = f64::NAN;
    let mut selection_events: u64 = 0;
    let mut checks: u64 = 0;

    while t < total {
        if update || pool.is_none() {
            let sel_rng = root.derive(STREAM_SELECTION).derive(selection_events);
            let outcome = select_pool(
                model,
                &w,
                &ds,
                rc.batch_size,
                rc.subset_size,
                pool_count,
                t,
                &sel_rng,
            )?;
            selection_events += 1;
            metrics.grad_queries_total += outcome.touches;
            metrics.query_allowance += (rc.subset_size * pool_count) as u64;
            metrics.degenerate_selections += u64::from(outcome.degenerate);
            for &(idx, loss) in &outcome.observations {
                windows.observe(idx, loss);
            }
            for batch in &outcome.pool.batches {
                for &i in &batch.selected {
                    metrics.selection_counts[i] += 1;
                }
            }

            let (union_idx, union_w) = outcome.pool.union();
            let mut hutch_rng = if config.redraw_hutchinson {
                hutch_root.derive(selection_events)
            } else {
                hutch_root.derive(0)
            };
            let mut settings = SurrogateSettings {
                stats: &mut stats,
                rng: &mut hutch_rng,
                num_hutchinson: config.num_hutchinson,
                scope: config.ema_scope,
            };
            let q = build_surrogate(model, &w, &ds, &union_idx, &union_w, t, &mut settings)?;
            if h_norm_first.is_nan() {
                h_norm_first = q.h_norm();
            }
            metrics.updates_total += 1;
            metrics.updates.push(UpdateRecord {
                iter: t,
                t1: interval,
                p: pool_count,
                rho_trigger: last_rho,
                hnorm_ratio: last_ratio,
                union_size: union_idx.len(),
            });
            if config.measure_bias_at_refresh {
                let nb = normalized_bias(model, &w, &outcome.pool, &ds)?;
                metrics.diag_queries_total += ds.active_count() as u64;
                metrics.diagnostics.push(DiagnosticRecord {
                    iter: t,
                    estimator: "crest-pool".into(),
                    bias: None,
                    variance: None,
                    normalized_bias: Some(nb.value),
                });
            }
            pool = Some(outcome.pool);
            surrogate = Some(q);
        }

        let active_pool = pool.as_mut().expect("pool built above");
        let steps = interval.min(total - t);
        for _ in 0..steps {
            let batch = active_pool.next_batch(&mut pool_rng).clone();
            let grad = batch_weighted_grad(
                model,
                &w,
                &ds,
                &batch.selected,
                &batch.normalized_weights(),
            )?;
            metrics.grad_queries_total += batch.selected.len() as u64;
            metrics.query_allowance += rc.batch_size as u64;
            let lr = warmup_lr(config.learning_rate, config.warmup_frac, total, t);
            momentum_step(&mut w, &mut velocity, &grad, lr, config.momentum);
            t += 1;
            if t.is_multiple_of(config.drop_interval) {
                drop_learned(
                    &mut ds,
                    &mut windows,
                    config.drop_threshold,
                    rc.batch_size,
                    t,
                    &mut metrics.dropped,
                );
            }
        }

        // Validity check on a fresh probe subset.
        let q = surrogate.as_ref().expect("surrogate built above");
        let mut probe_rng = root.derive(STREAM_PROBE).derive(checks);
        checks += 1;
        let active = ds.active_indices();
        let probe_n = rc.subset_size.min(active.len());
        let positions = probe_rng.sample_without_replacement(active.len(), probe_n);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for &pos in &positions {
            let idx = active[pos];
            let (loss, ok) = probe_example(model, &w, &ds, idx)?;
            loss_sum += loss;
            correct += usize::from(ok);
            forgetting.observe(idx, ok);
            windows.observe(idx, loss);
        }
        metrics.grad_queries_total += probe_n as u64;
        metrics.query_allowance += rc.subset_size as u64;
        let loss_vr = loss_sum / probe_n as f64;
        let acc_vr = correct as f64 / probe_n as f64;

        let mut delta = w.clone();
        axpy(&mut delta, -1.0, &q.anchor_w);
        let outcome = rho(q, &delta, loss_vr)?;
        last_rho = outcome.value;
        let mut refreshed = false;
        let (used_interval, used_pool) = (interval, pool_count);
        if outcome.loss_vanished {
            metrics.converged = true;
            update = false;
        } else if outcome.value > config.validity_threshold {
            update = true;
            refreshed = true;
            let (next_interval, next_pool, ratio) = refresh_schedule(
                config.interval_multiplier,
                config.pool_multiplier,
                h_norm_first,
                q.h_norm(),
                total,
            );
            interval = next_interval;
            pool_count = next_pool;
            last_ratio = ratio;
        } else {
            update = false;
        }
        metrics.intervals.push(IntervalRecord {
            iter: t,
            t1: used_interval,
            p: used_pool,
            rho: outcome.value,
            refreshed,
            active_n: ds.active_count(),
            loss_vr,
            acc_vr,
            grad_queries_cum: metrics.grad_queries_total,
            wall_ms_cum: started.elapsed().as_millis() as u64,
        });
    }

    metrics.forgetting = forgetting.scores();
    finalize(metrics, model, &w, &ds, started)
}
