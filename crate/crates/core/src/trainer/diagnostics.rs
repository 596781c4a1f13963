//! Gradient-estimator bias/variance probes and forgetting-score tracking.
//!
//! These run on parameter snapshots and never mutate trainer state. Bias and
//! variance follow the mini-batch-gradient definitions: bias is the norm of
//! the mean deviation from the full gradient, variance the mean squared
//! deviation (so it includes the squared bias).

use crate::models::{batch_weighted_grad, mean_grad, Dataset, Model};
use crate::numerics::{axpy, l2_norm, pairwise_distances, scale, SeededRng};
use crate::quadmodel::LOSS_FLOOR;
use crate::submodular::{lazy_greedy_select, SelectionProblem};
use crate::trainer::pool::CoresetPool;
use crate::{invalid, Result};

/// Mini-batch gradient estimators under study.
#[derive(Debug, Clone, PartialEq)]
pub enum GradientEstimator {
    /// The full active-set mean gradient itself (zero bias and variance).
    FullGradient,
    /// Plain uniform mini-batch of size m.
    RandomBatch { m: usize },
    /// Facility-location coreset of size m selected fresh from a random
    /// subset of size r each trial.
    MiniBatchCoreset { m: usize, r: usize },
    /// Weighted batch of size m drawn from one coreset of size
    /// `ceil(fraction * n)` selected once from the whole active set.
    EpochCoresetBatch { fraction: f64, m: usize },
}

impl GradientEstimator {
    pub fn name(&self) -> String {
        match self {
            GradientEstimator::FullGradient => "full".into(),
            GradientEstimator::RandomBatch { m } => format!("random-m{m}"),
            GradientEstimator::MiniBatchCoreset { m, r } => format!("coreset-m{m}-r{r}"),
            GradientEstimator::EpochCoresetBatch { fraction, m } => {
                format!("epoch-coreset-f{fraction}-m{m}")
            }
        }
    }
}

/// Monte-Carlo bias/variance of an estimator at a fixed snapshot.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorDiagnostics {
    /// `|| mean_i ĝ_i - ∇L ||`
    pub bias: f64,
    /// `mean_i || ĝ_i - ∇L ||²`
    pub variance: f64,
    /// Standard error of the mean estimate: `sqrt(spread / trials)` where
    /// spread is the mean squared deviation around the empirical mean. Used
    /// to judge whether a measured bias is statistically zero.
    pub std_error: f64,
    pub trials: usize,
}

/// Select a facility-location coreset of size `k` over the active set's
/// last-layer gradients, returning (indices, raw weights).
pub fn select_epoch_coreset<M: Model + ?Sized>(
    model: &M,
    w: &[f64],
    dataset: &Dataset,
    k: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let active = dataset.active_indices();
    if active.is_empty() {
        return Err(invalid("active set is empty"));
    }
    let k = k.clamp(1, active.len());
    let mut llgs = Vec::with_capacity(active.len());
    for &idx in &active {
        llgs.push(model.last_layer_grad(w, dataset.example(idx))?);
    }
    let problem = SelectionProblem::new(pairwise_distances(&llgs)?, k)?;
    let selection = lazy_greedy_select(&problem);
    // Sort members by dataset index (weights permuted alongside) so batch
    // draws index a canonical order.
    let mut pairs: Vec<(usize, usize)> = selection
        .indices
        .iter()
        .map(|&pos| active[pos])
        .zip(selection.weights)
        .collect();
    pairs.sort_unstable_by_key(|&(idx, _)| idx);
    Ok(pairs.into_iter().unzip())
}

/// Draw `m` members of a weighted coreset and return the batch with weights
/// renormalized to sum to the batch size. A batch of only zero-weight
/// members (centers that are nobody's nearest) carries zero mass and keeps
/// zero weights.
pub(crate) fn weighted_batch_from(
    members: &[usize],
    weights: &[usize],
    m: usize,
    rng: &mut SeededRng,
) -> (Vec<usize>, Vec<f64>) {
    let m = m.min(members.len());
    let positions = rng.sample_without_replacement(members.len(), m);
    let indices: Vec<usize> = positions.iter().map(|&p| members[p]).collect();
    let raw: Vec<f64> = positions.iter().map(|&p| weights[p] as f64).collect();
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        return (indices, raw);
    }
    let scale = m as f64 / total;
    (indices, raw.iter().map(|g| g * scale).collect())
}

/// Monte-Carlo bias/variance of `estimator` against the full active-set
/// gradient at `w`, over `trials` independent draws.
pub fn gradient_estimator_diagnostics<M: Model + ?Sized>(
    model: &M,
    w: &[f64],
    dataset: &Dataset,
    estimator: &GradientEstimator,
    trials: usize,
    rng: &mut SeededRng,
) -> Result<EstimatorDiagnostics> {
    if trials < 2 {
        return Err(invalid("diagnostics need at least two trials"));
    }
    let active = dataset.active_indices();
    let full = mean_grad(model, w, dataset, &active)?;
    let dim = full.len();

    // Epoch coresets are a deterministic function of the snapshot; select
    // once and let trials vary only over batch draws.
    let epoch_coreset = match estimator {
        GradientEstimator::EpochCoresetBatch { fraction, .. } => {
            if fraction.is_nan() || *fraction <= 0.0 || *fraction > 1.0 {
                return Err(invalid("fraction must lie in (0, 1]"));
            }
            let k = (fraction * active.len() as f64).ceil() as usize;
            Some(select_epoch_coreset(model, w, dataset, k)?)
        }
        _ => None,
    };

    let mut estimates: Vec<Vec<f64>> = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut trial_rng = rng.derive(trial as u64);
        let est = match estimator {
            GradientEstimator::FullGradient => full.clone(),
            GradientEstimator::RandomBatch { m } => {
                let m = (*m).min(active.len());
                let positions = trial_rng.sample_without_replacement(active.len(), m);
                let batch: Vec<usize> = positions.iter().map(|&i| active[i]).collect();
                mean_grad(model, w, dataset, &batch)?
            }
            GradientEstimator::MiniBatchCoreset { m, r } => {
                let outcome = super::pool::select_pool(
                    model,
                    w,
                    dataset,
                    (*m).min(active.len()),
                    *r,
                    1,
                    0,
                    &trial_rng,
                )?;
                let batch = &outcome.pool.batches[0];
                batch_weighted_grad(
                    model,
                    w,
                    dataset,
                    &batch.selected,
                    &batch.normalized_weights(),
                )?
            }
            GradientEstimator::EpochCoresetBatch { m, .. } => {
                let (members, weights) = epoch_coreset.as_ref().expect("selected above");
                let (batch, batch_weights) =
                    weighted_batch_from(members, weights, *m, &mut trial_rng);
                batch_weighted_grad(model, w, dataset, &batch, &batch_weights)?
            }
        };
        estimates.push(est);
    }

    let mut mean = vec![0.0; dim];
    for est in &estimates {
        axpy(&mut mean, 1.0 / trials as f64, est);
    }
    let mut bias_vec = mean.clone();
    axpy(&mut bias_vec, -1.0, &full);
    let bias = l2_norm(&bias_vec);

    let mut variance = 0.0;
    let mut spread = 0.0;
    for est in &estimates {
        let mut dev = est.clone();
        axpy(&mut dev, -1.0, &full);
        variance += dev.iter().map(|x| x * x).sum::<f64>();
        let mut centered = est.clone();
        axpy(&mut centered, -1.0, &mean);
        spread += centered.iter().map(|x| x * x).sum::<f64>();
    }
    variance /= trials as f64;
    spread /= trials as f64;

    Ok(EstimatorDiagnostics {
        bias,
        variance,
        std_error: (spread / trials as f64).sqrt(),
        trials,
    })
}

/// Pool-level normalized bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedBias {
    /// `|| mean_p ĝ_p - ∇L || / ||∇L||`, 0 when converged.
    pub value: f64,
    /// The full gradient norm vanished; the ratio is moot.
    pub converged: bool,
}

/// Normalized bias of the pool's weighted coreset gradients against the full
/// active-set gradient at the anchor.
pub fn normalized_bias<M: Model + ?Sized>(
    model: &M,
    w_anchor: &[f64],
    pool: &CoresetPool,
    dataset: &Dataset,
) -> Result<NormalizedBias> {
    if pool.is_empty() {
        return Err(invalid("pool is empty"));
    }
    let active = dataset.active_indices();
    let full = mean_grad(model, w_anchor, dataset, &active)?;
    let full_norm = l2_norm(&full);
    if full_norm <= LOSS_FLOOR {
        return Ok(NormalizedBias {
            value: 0.0,
            converged: true,
        });
    }
    let mut mean = vec![0.0; full.len()];
    for batch in &pool.batches {
        let g = batch_weighted_grad(
            model,
            w_anchor,
            dataset,
            &batch.selected,
            &batch.normalized_weights(),
        )?;
        axpy(&mut mean, 1.0, &g);
    }
    scale(&mut mean, 1.0 / pool.len() as f64);
    axpy(&mut mean, -1.0, &full);
    Ok(NormalizedBias {
        value: l2_norm(&mean) / full_norm,
        converged: false,
    })
}

/// Correct-to-incorrect transition counts across consecutive probe
/// observations of each example.
#[derive(Debug, Clone)]
pub struct ForgettingTracker {
    last_correct: Vec<Option<bool>>,
    counts: Vec<u64>,
    observed: Vec<bool>,
}

impl ForgettingTracker {
    pub fn new(n_examples: usize) -> Self {
        Self {
            last_correct: vec![None; n_examples],
            counts: vec![0; n_examples],
            observed: vec![false; n_examples],
        }
    }

    pub fn observe(&mut self, example: usize, correct: bool) {
        self.observed[example] = true;
        if self.last_correct[example] == Some(true) && !correct {
            self.counts[example] += 1;
        }
        self.last_correct[example] = Some(correct);
    }

    /// Per-example forgetting scores; `None` for never-observed examples.
    pub fn scores(&self) -> Vec<Option<u64>> {
        self.counts
            .iter()
            .zip(&self.observed)
            .map(|(&c, &seen)| if seen { Some(c) } else { None })
            .collect()
    }
}
