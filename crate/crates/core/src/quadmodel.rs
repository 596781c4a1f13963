//! Smoothed gradient/curvature statistics and the quadratic loss surrogate.
//!
//! Per-example gradients and Hessian diagonals are noisy, so both are pushed
//! through bias-corrected exponential moving averages before entering the
//! surrogate. The Hessian diagonal itself is never formed: it is estimated
//! stochastically from Hessian-vector products with Rademacher probes.

use std::collections::HashMap;

use crate::models::{Dataset, Model};
use crate::numerics::{l2_norm, sample_rademacher, SeededRng};
use crate::{invalid, Result};

/// Floor below which the sampled loss is treated as converged rather than
/// divided by.
pub const LOSS_FLOOR: f64 = 1e-12;

/// Bias-corrected EMA pair for one example: first moment of the gradient and
/// second moment of the Hessian diagonal.
#[derive(Debug, Clone)]
struct EmaRecord {
    grad_ema: Vec<f64>,
    grad_updates: u32,
    /// EMA of the elementwise *squared* diagonal; exposed via its sqrt.
    diag_sq_ema: Vec<f64>,
    diag_updates: u32,
}

impl EmaRecord {
    fn new(dim: usize) -> Self {
        Self {
            grad_ema: vec![0.0; dim],
            grad_updates: 0,
            diag_sq_ema: vec![0.0; dim],
            diag_updates: 0,
        }
    }
}

/// How smoothing statistics are keyed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmaScope {
    /// Per-example records, updated lazily when an example appears in a
    /// selected coreset; bias correction uses each example's own update
    /// count. Evaluating every example every step would erase the speedup,
    /// so this is the compute-compatible reading.
    Lazy,
    /// A single record over coreset-level aggregates, keyed by selection
    /// events.
    CoresetAggregate,
}

/// EMA store for gradients and squared Hessian diagonals.
#[derive(Debug, Clone)]
pub struct EmaStats {
    pub beta1: f64,
    pub beta2: f64,
    dim: usize,
    records: HashMap<usize, EmaRecord>,
    aggregate: EmaRecord,
}

impl EmaStats {
    pub fn new(beta1: f64, beta2: f64, dim: usize) -> Self {
        assert!(0.0 < beta1 && beta1 < 1.0, "beta1 must lie in (0,1)");
        assert!(0.0 < beta2 && beta2 < 1.0, "beta2 must lie in (0,1)");
        Self {
            beta1,
            beta2,
            dim,
            records: HashMap::new(),
            aggregate: EmaRecord::new(dim),
        }
    }

    fn record(&mut self, example: usize) -> &mut EmaRecord {
        let dim = self.dim;
        self.records
            .entry(example)
            .or_insert_with(|| EmaRecord::new(dim))
    }

    /// Fold a fresh gradient into the example's EMA; returns the
    /// bias-corrected smoothed gradient. The first update returns the input
    /// exactly.
    pub fn update_grad_ema(&mut self, example: usize, grad: &[f64]) -> Vec<f64> {
        let beta1 = self.beta1;
        let rec = self.record(example);
        Self::fold_first_moment(&mut rec.grad_ema, &mut rec.grad_updates, beta1, grad)
    }

    /// Fold a fresh Hessian-diagonal estimate into the example's squared-EMA;
    /// returns the bias-corrected elementwise square root. A constant input
    /// is a fixed point: the output is its absolute value at every step.
    pub fn update_hess_ema(&mut self, example: usize, diag: &[f64]) -> Vec<f64> {
        let beta2 = self.beta2;
        let rec = self.record(example);
        Self::fold_second_moment(&mut rec.diag_sq_ema, &mut rec.diag_updates, beta2, diag)
    }

    /// Aggregate-scope versions, keyed by selection event instead of example.
    pub fn update_aggregate_grad(&mut self, grad: &[f64]) -> Vec<f64> {
        Self::fold_first_moment(
            &mut self.aggregate.grad_ema,
            &mut self.aggregate.grad_updates,
            self.beta1,
            grad,
        )
    }

    pub fn update_aggregate_hess(&mut self, diag: &[f64]) -> Vec<f64> {
        Self::fold_second_moment(
            &mut self.aggregate.diag_sq_ema,
            &mut self.aggregate.diag_updates,
            self.beta2,
            diag,
        )
    }

    fn fold_first_moment(ema: &mut [f64], count: &mut u32, beta: f64, x: &[f64]) -> Vec<f64> {
        assert_eq!(ema.len(), x.len());
        *count += 1;
        let correction = 1.0 - beta.powi(*count as i32);
        let mut out = vec![0.0; ema.len()];
        for (i, (m, &v)) in ema.iter_mut().zip(x).enumerate() {
            *m = beta * *m + (1.0 - beta) * v;
            out[i] = *m / correction;
        }
        out
    }

    fn fold_second_moment(ema: &mut [f64], count: &mut u32, beta: f64, x: &[f64]) -> Vec<f64> {
        assert_eq!(ema.len(), x.len());
        *count += 1;
        let correction = 1.0 - beta.powi(*count as i32);
        let mut out = vec![0.0; ema.len()];
        for (i, (m, &v)) in ema.iter_mut().zip(x).enumerate() {
            *m = beta * *m + (1.0 - beta) * v * v;
            out[i] = (*m / correction).sqrt();
        }
        out
    }
}

/// Stochastic diagonal estimate `(1/s) Σ z ⊙ A z` over Rademacher probes.
/// Exact in one sample whenever the operator is diagonal (z² = 1).
pub fn hutchinson_diag<F: FnMut(&[f64]) -> Vec<f64>>(
    mut apply: F,
    dim: usize,
    num_samples: usize,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    if num_samples == 0 {
        return Err(invalid("hutchinson needs at least one sample"));
    }
    let mut acc = vec![0.0; dim];
    for _ in 0..num_samples {
        let z = sample_rademacher(dim, rng)?;
        let az = apply(&z);
        assert_eq!(az.len(), dim, "operator changed dimension");
        for i in 0..dim {
            acc[i] += z[i] * az[i];
        }
    }
    crate::numerics::scale(&mut acc, 1.0 / num_samples as f64);
    Ok(acc)
}

/// Diagonal quadratic model of the loss around an anchor point:
/// `F(δ) = ½ Σ h_i δ_i² + ḡ·δ + anchor_loss`.
#[derive(Debug, Clone)]
pub struct QuadraticSurrogate {
    pub anchor_w: Vec<f64>,
    pub anchor_loss: f64,
    pub g_bar: Vec<f64>,
    pub h_bar_diag: Vec<f64>,
    /// Iteration the coreset was selected at.
    pub created_at: u64,
}

impl QuadraticSurrogate {
    pub fn h_norm(&self) -> f64 {
        l2_norm(&self.h_bar_diag)
    }
}

/// Validity-ratio outcome: the ratio itself plus a converged flag for the
/// vanishing-loss case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rho {
    pub value: f64,
    pub loss_vanished: bool,
}

/// Surrogate value at displacement `delta` from the anchor.
pub fn surrogate_value(q: &QuadraticSurrogate, delta: &[f64]) -> Result<f64> {
    if delta.len() != q.g_bar.len() {
        return Err(invalid(format!(
            "displacement has length {}, surrogate expects {}",
            delta.len(),
            q.g_bar.len()
        )));
    }
    let mut quad = 0.0;
    for (h, d) in q.h_bar_diag.iter().zip(delta) {
        quad += h * d * d;
    }
    Ok(0.5 * quad + crate::numerics::dot(&q.g_bar, delta) + q.anchor_loss)
}

/// Relative disagreement between the surrogate and the sampled actual loss:
/// `|F(δ) - L^r| / L^r`. A sampled loss at or below [`LOSS_FLOOR`] means
/// training has effectively converged; the check is moot and reports 0.
pub fn rho(q: &QuadraticSurrogate, delta: &[f64], actual_loss_on_vr: f64) -> Result<Rho> {
    let predicted = surrogate_value(q, delta)?;
    if actual_loss_on_vr <= LOSS_FLOOR {
        return Ok(Rho {
            value: 0.0,
            loss_vanished: true,
        });
    }
    Ok(Rho {
        value: (predicted - actual_loss_on_vr).abs() / actual_loss_on_vr,
        loss_vanished: false,
    })
}

/// Inputs to [`build_surrogate`] beyond the model/data: smoothing state, the
/// probe generator, and the sampling controls.
pub struct SurrogateSettings<'a> {
    pub stats: &'a mut EmaStats,
    pub rng: &'a mut SeededRng,
    pub num_hutchinson: usize,
    pub scope: EmaScope,
}

/// Build the quadratic surrogate at `w_anchor` from a weighted coreset
/// union.
///
/// Lazy scope: each distinct example's fresh gradient and Hutchinson diagonal
/// estimate are folded into that example's EMAs, and the surrogate
/// aggregates the smoothed values by `(1/|S|) Σ γ_j (·)_j`. Aggregate scope:
/// the weighted coreset gradient and the diagonal of the weighted-mean
/// Hessian are smoothed as one record keyed by build events.
pub fn build_surrogate<M: Model + ?Sized>(
    model: &M,
    w_anchor: &[f64],
    dataset: &Dataset,
    indices: &[usize],
    weights: &[f64],
    created_at: u64,
    settings: &mut SurrogateSettings<'_>,
) -> Result<QuadraticSurrogate> {
    if indices.is_empty() {
        return Err(invalid("coreset union is empty"));
    }
    if weights.len() != indices.len() {
        return Err(invalid("weights and indices disagree in length"));
    }
    let dim = model.param_count();
    let inv_len = 1.0 / indices.len() as f64;

    let anchor_loss =
        crate::models::batch_weighted_loss(model, w_anchor, dataset, indices, weights)?;

    let (g_bar, h_bar_diag) = match settings.scope {
        EmaScope::Lazy => {
            // Smooth per example, once per distinct index even if the union
            // carries it several times; every union entry then contributes
            // its weight times the smoothed value.
            let mut smoothed: HashMap<usize, (Vec<f64>, Vec<f64>)> = HashMap::new();
            for &idx in indices {
                if smoothed.contains_key(&idx) {
                    continue;
                }
                let fresh_grad = model.grad(w_anchor, dataset.example(idx))?;
                let g_s = settings.stats.update_grad_ema(idx, &fresh_grad);
                let diag = hutchinson_diag(
                    |z| {
                        model
                            .hvp_single(w_anchor, dataset.example(idx), z)
                            .expect("dimensions already validated")
                    },
                    dim,
                    settings.num_hutchinson,
                    settings.rng,
                )?;
                let h_s = settings.stats.update_hess_ema(idx, &diag);
                smoothed.insert(idx, (g_s, h_s));
            }
            let mut g_bar = vec![0.0; dim];
            let mut h_bar = vec![0.0; dim];
            for (&idx, &gamma) in indices.iter().zip(weights) {
                let (g_s, h_s) = &smoothed[&idx];
                crate::numerics::axpy(&mut g_bar, gamma * inv_len, g_s);
                crate::numerics::axpy(&mut h_bar, gamma * inv_len, h_s);
            }
            (g_bar, h_bar)
        }
        EmaScope::CoresetAggregate => {
            let fresh =
                crate::models::batch_weighted_grad(model, w_anchor, dataset, indices, weights)?;
            let g_bar = settings.stats.update_aggregate_grad(&fresh);
            let diag = hutchinson_diag(
                |z| {
                    crate::models::hvp(model, w_anchor, dataset, indices, weights, z)
                        .expect("dimensions already validated")
                },
                dim,
                settings.num_hutchinson,
                settings.rng,
            )?;
            let h_bar = settings.stats.update_aggregate_hess(&diag);
            (g_bar, h_bar)
        }
    };

    Ok(QuadraticSurrogate {
        anchor_w: w_anchor.to_vec(),
        anchor_loss,
        g_bar,
        h_bar_diag,
        created_at,
    })
}
