//! Mini-batch coreset pools: selection from random subsets and cycling
//! consumption during training intervals.

use crate::models::{Dataset, Model};
use crate::numerics::{pairwise_distances, SeededRng};
use crate::submodular::{lazy_greedy_select, SelectionProblem};
use crate::Result;

/// A batch-sized coreset selected from one random subset.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatchCoreset {
    /// The random subset V_p this coreset was selected from (dataset indices).
    pub source_subset: Vec<usize>,
    /// Selected dataset indices, in selection order.
    pub selected: Vec<usize>,
    /// Raw nearest-center counts; sum equals `source_subset.len()`.
    pub weights: Vec<usize>,
    pub selected_at: u64,
}

impl MiniBatchCoreset {
    /// Weights rescaled to sum to `selected.len()`. The `(1/|S|) Σ γ g`
    /// batch-gradient form then evaluates the weighted *mean* gradient of
    /// the source subset, which is the nearly-unbiased estimate the pool is
    /// built to provide; raw counts would scale it by `|V_p|/|S|`.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let total: usize = self.weights.iter().sum();
        let scale = self.selected.len() as f64 / total as f64;
        self.weights.iter().map(|&g| g as f64 * scale).collect()
    }
}

/// The P coresets selected at one anchor point, consumed in random order
/// without replacement (reshuffled on exhaustion) so staleness stays
/// bounded.
#[derive(Debug, Clone)]
pub struct CoresetPool {
    pub batches: Vec<MiniBatchCoreset>,
    order: Vec<usize>,
    cursor: usize,
}

impl CoresetPool {
    pub fn new(batches: Vec<MiniBatchCoreset>) -> Self {
        let order = (0..batches.len()).collect();
        Self {
            batches,
            order,
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    /// Next coreset in the cycle; reshuffles the visit order each time the
    /// pool is exhausted.
    pub fn next_batch(&mut self, rng: &mut SeededRng) -> &MiniBatchCoreset {
        assert!(!self.batches.is_empty(), "cannot draw from an empty pool");
        if self.cursor == 0 {
            rng.shuffle(&mut self.order);
        }
        let batch = &self.batches[self.order[self.cursor]];
        self.cursor = (self.cursor + 1) % self.order.len();
        batch
    }

    /// Multiset union of all batches as (index, normalized weight) pairs.
    /// Weight normalization is per batch, so the union total equals the
    /// union length and the `(1/|S|) Σ γ (·)` aggregates stay mean-scaled.
    pub fn union(&self) -> (Vec<usize>, Vec<f64>) {
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        for batch in &self.batches {
            indices.extend_from_slice(&batch.selected);
            weights.extend(batch.normalized_weights());
        }
        (indices, weights)
    }
}

/// Everything a selection pass produces besides the pool itself.
#[derive(Debug)]
pub struct SelectionOutcome {
    pub pool: CoresetPool,
    /// Per-example loss observations gathered during the pass, for drop
    /// bookkeeping.
    pub observations: Vec<(usize, f64)>,
    /// Example evaluations spent.
    pub touches: u64,
    /// The active set was smaller than the batch size, so the pool is the
    /// whole active set with unit weights.
    pub degenerate: bool,
}

/// Select `n_subsets` mini-batch coresets at the current parameters.
///
/// Each subset V_p of size `min(subset_size, |active|)` is drawn uniformly
/// without replacement from the active set using a stream derived from
/// (rng, p), so per-subset work could run on parallel workers and merge in p
/// order with identical results. Selection maximizes facility location over
/// pairwise last-layer gradient distances with budget `min(batch_size,
/// |V_p|)`.
#[allow(clippy::too_many_arguments)]
pub fn select_pool<M: Model + ?Sized>(
    model: &M,
    w: &[f64],
    dataset: &Dataset,
    batch_size: usize,
    subset_size: usize,
    n_subsets: usize,
    selected_at: u64,
    rng: &SeededRng,
) -> Result<SelectionOutcome> {
    let active = dataset.active_indices();
    if active.is_empty() {
        return Err(crate::invalid("active set is empty"));
    }
    let mut observations = Vec::new();
    let mut touches = 0u64;

    if active.len() < batch_size {
        // Degenerate fallback: train on everything that is left.
        for &idx in &active {
            observations.push((idx, model.loss(w, dataset.example(idx))?));
            touches += 1;
        }
        let coreset = MiniBatchCoreset {
            source_subset: active.clone(),
            selected: active.clone(),
            weights: vec![1; active.len()],
            selected_at,
        };
        return Ok(SelectionOutcome {
            pool: CoresetPool::new(vec![coreset]),
            observations,
            touches,
            degenerate: true,
        });
    }

    let r = subset_size.min(active.len());
    let k = batch_size.min(r);
    // Subsets may overlap; each example is evaluated once per selection
    // event (the anchor is fixed, so repeated values would be identical).
    let mut cache: Vec<Option<Vec<f64>>> = vec![None; dataset.len()];
    let mut batches = Vec::with_capacity(n_subsets);
    for p in 0..n_subsets {
        let mut sub_rng = rng.derive(p as u64);
        let positions = sub_rng.sample_without_replacement(active.len(), r);
        let subset: Vec<usize> = positions.iter().map(|&i| active[i]).collect();

        let mut llgs = Vec::with_capacity(r);
        for &idx in &subset {
            if cache[idx].is_none() {
                let ex = dataset.example(idx);
                cache[idx] = Some(model.last_layer_grad(w, ex)?);
                observations.push((idx, model.loss(w, ex)?));
                touches += 1;
            }
            llgs.push(cache[idx].clone().expect("just filled"));
        }
        let problem = SelectionProblem::new(pairwise_distances(&llgs)?, k)?;
        let selection = lazy_greedy_select(&problem);

        batches.push(MiniBatchCoreset {
            source_subset: subset.clone(),
            selected: selection.indices.iter().map(|&pos| subset[pos]).collect(),
            weights: selection.weights,
            selected_at,
        });
    }

    Ok(SelectionOutcome {
        pool: CoresetPool::new(batches),
        observations,
        touches,
        degenerate: false,
    })
}
