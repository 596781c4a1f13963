//! Differentiable models with per-example loss, analytic gradients,
//! last-layer gradients, and exact Hessian-vector products.
//!
//! Both model kinds are cross-entropy classifiers. The gradient and HVP
//! formulas are hand-derived (softmax regression in closed form, the MLP via
//! forward-over-reverse tangents) and are checked against the central
//! difference oracle in `numerics`.

mod dataset;

pub use dataset::{generate_synthetic, load_dataset, Dataset, Example, SyntheticSpec};

use crate::numerics::{dot, SeededRng};
use crate::{invalid, Result};

/// Per-example differentiable loss. Implemented by [`ModelHandle`] and by
/// test-only models (e.g. diagonal quadratics used to pin down the surrogate).
pub trait Model {
    fn param_count(&self) -> usize;

    /// Dimension of [`Model::last_layer_grad`] outputs.
    fn output_dim(&self) -> usize;

    /// Cross-entropy (or analogous nonnegative) loss of one example.
    fn loss(&self, w: &[f64], ex: &Example) -> Result<f64>;

    /// Analytic gradient of [`Model::loss`] w.r.t. the full parameter vector.
    fn grad(&self, w: &[f64], ex: &Example) -> Result<Vec<f64>>;

    /// Gradient of the loss w.r.t. the input to the last layer: the output
    /// error signal `softmax(logits) - onehot(label)`, dimension K. Cheap
    /// (forward pass only) and model-size independent.
    fn last_layer_grad(&self, w: &[f64], ex: &Example) -> Result<Vec<f64>>;

    /// Exact Hessian-vector product of one example's loss.
    fn hvp_single(&self, w: &[f64], ex: &Example, v: &[f64]) -> Result<Vec<f64>>;

    /// Starting parameters for training.
    fn init_params(&self, _rng: &mut SeededRng) -> Vec<f64> {
        vec![0.0; self.param_count()]
    }
}

/// Supported architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    SoftmaxRegression,
    /// One tanh hidden layer of the given width. tanh keeps the loss twice
    /// differentiable everywhere, so HVPs are exact with no kink choices.
    TwoLayerMlp { hidden: usize },
}

/// A fixed architecture: kind, input dimension, class count, bias switch.
/// Immutable after construction; all evaluation is pure.
#[derive(Debug, Clone)]
pub struct ModelHandle {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub n_classes: usize,
    pub use_bias: bool,
}

impl ModelHandle {
    pub fn softmax_regression(input_dim: usize, n_classes: usize) -> Self {
        Self {
            kind: ModelKind::SoftmaxRegression,
            input_dim,
            n_classes,
            use_bias: false,
        }
    }

    pub fn two_layer_mlp(input_dim: usize, hidden: usize, n_classes: usize) -> Self {
        Self {
            kind: ModelKind::TwoLayerMlp { hidden },
            input_dim,
            n_classes,
            use_bias: false,
        }
    }

    pub fn with_bias(mut self, use_bias: bool) -> Self {
        self.use_bias = use_bias;
        self
    }

    fn check_dims(&self, w: &[f64], ex: &Example) -> Result<()> {
        if w.len() != self.param_count() {
            return Err(invalid(format!(
                "parameter vector has length {}, model expects {}",
                w.len(),
                self.param_count()
            )));
        }
        if ex.features.len() != self.input_dim {
            return Err(invalid(format!(
                "example has {} features, model expects {}",
                ex.features.len(),
                self.input_dim
            )));
        }
        if ex.label >= self.n_classes {
            return Err(invalid(format!(
                "label {} out of range (K = {})",
                ex.label, self.n_classes
            )));
        }
        Ok(())
    }

    /// Logits for one example.
    fn logits(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        match self.kind {
            ModelKind::SoftmaxRegression => self.softmax_logits(w, x),
            ModelKind::TwoLayerMlp { hidden } => {
                let a1 = self.mlp_hidden(w, x, hidden);
                self.mlp_logits(w, &a1, hidden)
            }
        }
    }

    fn softmax_logits(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        let (d, k) = (self.input_dim, self.n_classes);
        (0..k)
            .map(|c| {
                let mut z = dot(&w[c * d..(c + 1) * d], x);
                if self.use_bias {
                    z += w[k * d + c];
                }
                z
            })
            .collect()
    }

    fn mlp_hidden(&self, w: &[f64], x: &[f64], hidden: usize) -> Vec<f64> {
        let d = self.input_dim;
        (0..hidden)
            .map(|i| {
                let mut z = dot(&w[i * d..(i + 1) * d], x);
                if self.use_bias {
                    z += w[hidden * d + i];
                }
                z.tanh()
            })
            .collect()
    }

    fn mlp_logits(&self, w: &[f64], a1: &[f64], hidden: usize) -> Vec<f64> {
        let k = self.n_classes;
        let off2 = self.second_layer_offset(hidden);
        (0..k)
            .map(|c| {
                let mut z = dot(&w[off2 + c * hidden..off2 + (c + 1) * hidden], a1);
                if self.use_bias {
                    z += w[off2 + k * hidden + c];
                }
                z
            })
            .collect()
    }

    fn second_layer_offset(&self, hidden: usize) -> usize {
        hidden * self.input_dim + if self.use_bias { hidden } else { 0 }
    }
}

/// Numerically-safe softmax probabilities and log-sum-exp.
fn softmax(logits: &[f64]) -> (Vec<f64>, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    let mut p: Vec<f64> = logits
        .iter()
        .map(|z| {
            let e = (z - max).exp();
            sum += e;
            e
        })
        .collect();
    for q in p.iter_mut() {
        *q /= sum;
    }
    (p, max + sum.ln())
}

impl Model for ModelHandle {
    /// Zeros for softmax regression (convex; the w = 0 symmetry is exactly
    /// testable), small seeded uniform weights for the MLP.
    fn init_params(&self, rng: &mut SeededRng) -> Vec<f64> {
        match self.kind {
            ModelKind::SoftmaxRegression => vec![0.0; self.param_count()],
            ModelKind::TwoLayerMlp { .. } => {
                let scale = 0.5 / (self.input_dim as f64).sqrt();
                (0..self.param_count())
                    .map(|_| scale * (2.0 * rng.uniform() - 1.0))
                    .collect()
            }
        }
    }

    fn param_count(&self) -> usize {
        let (d, k) = (self.input_dim, self.n_classes);
        match self.kind {
            ModelKind::SoftmaxRegression => k * d + if self.use_bias { k } else { 0 },
            ModelKind::TwoLayerMlp { hidden } => {
                hidden * d + k * hidden + if self.use_bias { hidden + k } else { 0 }
            }
        }
    }

    fn output_dim(&self) -> usize {
        self.n_classes
    }

    fn loss(&self, w: &[f64], ex: &Example) -> Result<f64> {
        self.check_dims(w, ex)?;
        let logits = self.logits(w, &ex.features);
        let (_, lse) = softmax(&logits);
        Ok(lse - logits[ex.label])
    }

    fn last_layer_grad(&self, w: &[f64], ex: &Example) -> Result<Vec<f64>> {
        self.check_dims(w, ex)?;
        let logits = self.logits(w, &ex.features);
        let (mut p, _) = softmax(&logits);
        p[ex.label] -= 1.0;
        Ok(p)
    }

    fn grad(&self, w: &[f64], ex: &Example) -> Result<Vec<f64>> {
        self.check_dims(w, ex)?;
        let (d, k) = (self.input_dim, self.n_classes);
        let x = &ex.features;
        let mut g = vec![0.0; w.len()];
        match self.kind {
            ModelKind::SoftmaxRegression => {
                let logits = self.softmax_logits(w, x);
                let (mut e, _) = softmax(&logits);
                e[ex.label] -= 1.0;
                for c in 0..k {
                    for j in 0..d {
                        g[c * d + j] = e[c] * x[j];
                    }
                    if self.use_bias {
                        g[k * d + c] = e[c];
                    }
                }
            }
            ModelKind::TwoLayerMlp { hidden } => {
                let a1 = self.mlp_hidden(w, x, hidden);
                let logits = self.mlp_logits(w, &a1, hidden);
                let (mut e, _) = softmax(&logits);
                e[ex.label] -= 1.0;
                let off2 = self.second_layer_offset(hidden);
                // Second layer: dW2 = e outer a1, db2 = e.
                for c in 0..k {
                    for i in 0..hidden {
                        g[off2 + c * hidden + i] = e[c] * a1[i];
                    }
                    if self.use_bias {
                        g[off2 + k * hidden + c] = e[c];
                    }
                }
                // Backprop through tanh: dz1 = (W2^T e) (1 - a1^2).
                for i in 0..hidden {
                    let da1: f64 = (0..k).map(|c| w[off2 + c * hidden + i] * e[c]).sum();
                    let dz1 = da1 * (1.0 - a1[i] * a1[i]);
                    for j in 0..d {
                        g[i * d + j] = dz1 * x[j];
                    }
                    if self.use_bias {
                        g[hidden * d + i] = dz1;
                    }
                }
            }
        }
        Ok(g)
    }

    fn hvp_single(&self, w: &[f64], ex: &Example, v: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(w, ex)?;
        if v.len() != w.len() {
            return Err(invalid(format!(
                "hvp direction has length {}, expected {}",
                v.len(),
                w.len()
            )));
        }
        let (d, k) = (self.input_dim, self.n_classes);
        let x = &ex.features;
        let mut out = vec![0.0; w.len()];
        match self.kind {
            ModelKind::SoftmaxRegression => {
                // H = (diag(p) - p p^T) ⊗ (x x^T); for direction V (K x d):
                // a = V x, s = p.a - (p·a) p, Hv = s ⊗ x.
                let logits = self.softmax_logits(w, x);
                let (p, _) = softmax(&logits);
                let a: Vec<f64> = (0..k)
                    .map(|c| {
                        let mut t = dot(&v[c * d..(c + 1) * d], x);
                        if self.use_bias {
                            t += v[k * d + c];
                        }
                        t
                    })
                    .collect();
                let pa = dot(&p, &a);
                for c in 0..k {
                    let s = p[c] * (a[c] - pa);
                    for j in 0..d {
                        out[c * d + j] = s * x[j];
                    }
                    if self.use_bias {
                        out[k * d + c] = s;
                    }
                }
            }
            ModelKind::TwoLayerMlp { hidden } => {
                // Forward-over-reverse tangents through the whole graph.
                let off2 = self.second_layer_offset(hidden);
                let a1 = self.mlp_hidden(w, x, hidden);
                let logits = self.mlp_logits(w, &a1, hidden);
                let (p, _) = softmax(&logits);
                let mut e = p.clone();
                e[ex.label] -= 1.0;

                // Tangents of the forward pass.
                let r_z1: Vec<f64> = (0..hidden)
                    .map(|i| {
                        let mut t = dot(&v[i * d..(i + 1) * d], x);
                        if self.use_bias {
                            t += v[hidden * d + i];
                        }
                        t
                    })
                    .collect();
                let r_a1: Vec<f64> = (0..hidden)
                    .map(|i| (1.0 - a1[i] * a1[i]) * r_z1[i])
                    .collect();
                let r_z2: Vec<f64> = (0..k)
                    .map(|c| {
                        let mut t = dot(&v[off2 + c * hidden..off2 + (c + 1) * hidden], &a1)
                            + dot(&w[off2 + c * hidden..off2 + (c + 1) * hidden], &r_a1);
                        if self.use_bias {
                            t += v[off2 + k * hidden + c];
                        }
                        t
                    })
                    .collect();
                let p_rz2 = dot(&p, &r_z2);
                let r_e: Vec<f64> = (0..k).map(|c| p[c] * (r_z2[c] - p_rz2)).collect();

                // Tangents of the backward pass.
                for c in 0..k {
                    for i in 0..hidden {
                        out[off2 + c * hidden + i] = r_e[c] * a1[i] + e[c] * r_a1[i];
                    }
                    if self.use_bias {
                        out[off2 + k * hidden + c] = r_e[c];
                    }
                }
                for i in 0..hidden {
                    let mut da1 = 0.0;
                    let mut r_da1 = 0.0;
                    for c in 0..k {
                        da1 += w[off2 + c * hidden + i] * e[c];
                        r_da1 +=
                            v[off2 + c * hidden + i] * e[c] + w[off2 + c * hidden + i] * r_e[c];
                    }
                    let sech2 = 1.0 - a1[i] * a1[i];
                    let r_dz1 = r_da1 * sech2 - 2.0 * da1 * a1[i] * r_a1[i];
                    for j in 0..d {
                        out[i * d + j] = r_dz1 * x[j];
                    }
                    if self.use_bias {
                        out[hidden * d + i] = r_dz1;
                    }
                }
            }
        }
        Ok(out)
    }
}

fn check_batch(indices: &[usize], weights: &[f64]) -> Result<()> {
    if indices.is_empty() {
        return Err(invalid("batch index set is empty"));
    }
    if weights.len() != indices.len() {
        return Err(invalid(format!(
            "{} weights for {} indices",
            weights.len(),
            indices.len()
        )));
    }
    if let Some(bad) = weights.iter().find(|&&g| g.is_nan() || g < 0.0) {
        return Err(invalid(format!("negative or NaN weight {bad}")));
    }
    Ok(())
}

/// Weighted batch gradient `(1/|S|) Σ_j γ_j ∇L_j(w)`.
pub fn batch_weighted_grad<M: Model + ?Sized>(
    model: &M,
    w: &[f64],
    dataset: &Dataset,
    indices: &[usize],
    weights: &[f64],
) -> Result<Vec<f64>> {
    check_batch(indices, weights)?;
    let mut acc = vec![0.0; model.param_count()];
    for (&idx, &gamma) in indices.iter().zip(weights) {
        let g = model.grad(w, dataset.example(idx))?;
        crate::numerics::axpy(&mut acc, gamma, &g);
    }
    crate::numerics::scale(&mut acc, 1.0 / indices.len() as f64);
    Ok(acc)
}

/// Weighted batch loss `(1/|S|) Σ_j γ_j L_j(w)`.
pub fn batch_weighted_loss<M: Model + ?Sized>(
    model: &M,
    w: &[f64],
    dataset: &Dataset,
    indices: &[usize],
    weights: &[f64],
) -> Result<f64> {
    check_batch(indices, weights)?;
    let mut acc = 0.0;
    for (&idx, &gamma) in indices.iter().zip(weights) {
        acc += gamma * model.loss(w, dataset.example(idx))?;
    }
    Ok(acc / indices.len() as f64)
}

/// Product of the weighted-mean Hessian over `indices` with `v`:
/// `(1/|S|) Σ_j γ_j H_j v`.
pub fn hvp<M: Model + ?Sized>(
    model: &M,
    w: &[f64],
    dataset: &Dataset,
    indices: &[usize],
    weights: &[f64],
    v: &[f64],
) -> Result<Vec<f64>> {
    check_batch(indices, weights)?;
    let mut acc = vec![0.0; model.param_count()];
    for (&idx, &gamma) in indices.iter().zip(weights) {
        let hv = model.hvp_single(w, dataset.example(idx), v)?;
        crate::numerics::axpy(&mut acc, gamma, &hv);
    }
    crate::numerics::scale(&mut acc, 1.0 / indices.len() as f64);
    Ok(acc)
}

/// Plain mean gradient over `indices`.
pub fn mean_grad<M: Model + ?Sized>(
    model: &M,
    w: &[f64],
    dataset: &Dataset,
    indices: &[usize],
) -> Result<Vec<f64>> {
    let weights = vec![1.0; indices.len()];
    batch_weighted_grad(model, w, dataset, indices, &weights)
}
