//! Baseline trainers: plain mini-batch SGD and per-epoch coreset training.

use std::time::Instant;

use crate::models::{batch_weighted_grad, mean_grad, Dataset, Model};
use crate::numerics::SeededRng;
use crate::trainer::diagnostics::{select_epoch_coreset, ForgettingTracker};
use crate::trainer::metrics::{IntervalRecord, RunMetrics, UpdateRecord};
use crate::trainer::{
    finalize, momentum_step, probe_example, warmup_lr, TrainerConfig, STREAM_BATCH, STREAM_INIT,
    STREAM_PROBE,
};
use crate::{invalid, Result};

/// Shared probe/record plumbing for the baselines.
struct BaselineLoop<'a, M: Model + ?Sized> {
    model: &'a M,
    dataset: &'a Dataset,
    probe_root: SeededRng,
    probe_size: usize,
    probes: u64,
    forgetting: ForgettingTracker,
}

impl<'a, M: Model + ?Sized> BaselineLoop<'a, M> {
    fn new(model: &'a M, dataset: &'a Dataset, root: &SeededRng, probe_size: usize) -> Self {
        Self {
            model,
            dataset,
            probe_root: root.derive(STREAM_PROBE),
            probe_size,
            probes: 0,
            forgetting: ForgettingTracker::new(dataset.len()),
        }
    }

    /// Loss/accuracy on a fresh probe subset; purely diagnostic.
    fn probe(
        &mut self,
        w: &[f64],
        t: u64,
        p: usize,
        metrics: &mut RunMetrics,
        started: Instant,
    ) -> Result<()> {
        let mut rng = self.probe_root.derive(self.probes);
        self.probes += 1;
        let n = self.dataset.len();
        let probe_n = self.probe_size.min(n);
        let positions = rng.sample_without_replacement(n, probe_n);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for &idx in &positions {
            let (loss, ok) = probe_example(self.model, w, self.dataset, idx)?;
            loss_sum += loss;
            correct += usize::from(ok);
            self.forgetting.observe(idx, ok);
        }
        metrics.diag_queries_total += probe_n as u64;
        metrics.intervals.push(IntervalRecord {
            iter: t,
            t1: 1,
            p,
            rho: f64::NAN,
            refreshed: false,
            active_n: n,
            loss_vr: loss_sum / probe_n as f64,
            acc_vr: correct as f64 / probe_n as f64,
            grad_queries_cum: metrics.grad_queries_total,
            wall_ms_cum: started.elapsed().as_millis() as u64,
        });
        Ok(())
    }
}

/// Plain mini-batch SGD with momentum under the same iteration budget and
/// learning-rate schedule. With the batch size equal to the dataset this is
/// exactly full-batch gradient descent.
pub fn run_random_baseline<M: Model + ?Sized>(
    config: &TrainerConfig,
    model: &M,
    dataset: &Dataset,
) -> Result<RunMetrics> {
    let rc = config.resolve(dataset.len())?;
    let started = Instant::now();
    let root = SeededRng::new(config.seed);
    let mut w = model.init_params(&mut root.derive(STREAM_INIT));
    let mut velocity = vec![0.0; w.len()];
    let mut batch_rng = root.derive(STREAM_BATCH);

    let mut metrics = RunMetrics::new("random", config.seed, dataset.len());
    let mut probes = BaselineLoop::new(model, dataset, &root, rc.subset_size);

    let total = config.total_iterations;
    let n = dataset.len();
    for t in 0..total {
        let batch = batch_rng.sample_without_replacement(n, rc.batch_size);
        let grad = mean_grad(model, &w, dataset, &batch)?;
        metrics.grad_queries_total += rc.batch_size as u64;
        let lr = warmup_lr(config.learning_rate, config.warmup_frac, total, t);
        momentum_step(&mut w, &mut velocity, &grad, lr, config.momentum);
        if (t + 1) % config.drop_interval == 0 || t + 1 == total {
            probes.probe(&w, t + 1, 0, &mut metrics, started)?;
        }
    }
    metrics.forgetting = probes.forgetting.scores();
    finalize(metrics, model, &w, dataset, started)
}

/// CRAIG-style baseline: at every epoch boundary, select one weighted
/// coreset of `ceil(fraction * n)` examples from the full data by facility
/// location over last-layer gradients, then train the epoch on weighted
/// mini-batches drawn from it.
pub fn run_epoch_coreset_baseline<M: Model + ?Sized>(
    config: &TrainerConfig,
    model: &M,
    dataset: &Dataset,
    fraction: f64,
) -> Result<RunMetrics> {
    if fraction.is_nan() || fraction <= 0.0 || fraction > 1.0 {
        return Err(invalid("fraction must lie in (0, 1]"));
    }
    let rc = config.resolve(dataset.len())?;
    let started = Instant::now();
    let root = SeededRng::new(config.seed);
    let mut w = model.init_params(&mut root.derive(STREAM_INIT));
    let mut velocity = vec![0.0; w.len()];
    let mut batch_rng = root.derive(STREAM_BATCH);

    let mut metrics = RunMetrics::new("epoch-coreset", config.seed, dataset.len());
    let mut probes = BaselineLoop::new(model, dataset, &root, rc.subset_size);

    let n = dataset.len();
    let total = config.total_iterations;
    let epoch_len = (n as u64).div_ceil(rc.batch_size as u64);
    let coreset_size = ((fraction * n as f64).ceil() as usize).clamp(1, n);

    let mut members: Vec<usize> = Vec::new();
    let mut weights: Vec<usize> = Vec::new();
    for t in 0..total {
        if t % epoch_len == 0 {
            let (m, g) = select_epoch_coreset(model, &w, dataset, coreset_size)?;
            members = m;
            weights = g;
            metrics.grad_queries_total += n as u64;
            metrics.updates_total += 1;
            metrics.updates.push(UpdateRecord {
                iter: t,
                t1: epoch_len,
                p: 1,
                rho_trigger: f64::NAN,
                hnorm_ratio: f64::NAN,
                union_size: members.len(),
            });
            for &i in &members {
                metrics.selection_counts[i] += 1;
            }
        }
        let (batch, batch_weights) = crate::trainer::diagnostics::weighted_batch_from(
            &members,
            &weights,
            rc.batch_size,
            &mut batch_rng,
        );
        let grad = batch_weighted_grad(model, &w, dataset, &batch, &batch_weights)?;
        metrics.grad_queries_total += batch.len() as u64;
        let lr = warmup_lr(config.learning_rate, config.warmup_frac, total, t);
        momentum_step(&mut w, &mut velocity, &grad, lr, config.momentum);
        if (t + 1) % config.drop_interval == 0 || t + 1 == total {
            probes.probe(&w, t + 1, 1, &mut metrics, started)?;
        }
    }
    metrics.forgetting = probes.forgetting.scores();
    finalize(metrics, model, &w, dataset, started)
}
