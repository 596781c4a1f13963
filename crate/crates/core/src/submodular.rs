//! Facility-location selection over pairwise gradient distances.
//!
//! The objective `f(S) = C - Σ_i min_{j∈S} D[i][j]` is monotone submodular
//! once `C >= n * max(D)`, so greedy selection carries the usual `1 - 1/e`
//! guarantee. Lazy greedy reproduces plain greedy exactly (shared
//! tie-breaking) while skipping most marginal-gain evaluations.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::numerics::DistanceMatrix;
use crate::{invalid, Error, Result};

/// One facility-location instance: distances over a candidate set, the
/// offset constant, and a cardinality budget.
#[derive(Debug, Clone)]
pub struct SelectionProblem {
    pub distances: DistanceMatrix,
    /// Offset making the objective nonnegative and monotone:
    /// `n * max(D) + 1`.
    pub big_c: f64,
    pub k: usize,
}

impl SelectionProblem {
    pub fn new(distances: DistanceMatrix, k: usize) -> Result<Self> {
        let n = distances.n();
        if k == 0 || k > n {
            return Err(invalid(format!("budget k={k} out of range 1..={n}")));
        }
        let big_c = n as f64 * distances.max_entry() + 1.0;
        Ok(Self {
            distances,
            big_c,
            k,
        })
    }

    pub fn n_candidates(&self) -> usize {
        self.distances.n()
    }
}

/// A selected coreset: candidate positions in selection order, their weights,
/// the achieved objective, and per-step marginal gains.
#[derive(Debug, Clone, PartialEq)]
pub struct CoresetSelection {
    pub indices: Vec<usize>,
    /// Per selected index: how many candidates it is the nearest center of.
    pub weights: Vec<usize>,
    pub objective: f64,
    pub gains: Vec<f64>,
    /// Marginal-gain evaluations spent (instrumentation).
    pub gain_evals: usize,
}

/// Facility-location value of a nonempty index set.
pub fn facility_value(problem: &SelectionProblem, selected: &[usize]) -> Result<f64> {
    if selected.is_empty() {
        return Err(invalid("facility value of the empty set is undefined"));
    }
    let n = problem.n_candidates();
    for &j in selected {
        if j >= n {
            return Err(invalid(format!("selected index {j} out of range")));
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        let nearest = selected
            .iter()
            .map(|&j| problem.distances.get(i, j))
            .fold(f64::INFINITY, f64::min);
        total += nearest;
    }
    Ok(problem.big_c - total)
}

/// Plain greedy maximization: k steps of maximal marginal gain, ties broken
/// toward the smallest candidate index. Gains are measured against
/// `f(∅) = 0`, so the first gain is the full singleton value.
pub fn greedy_select(problem: &SelectionProblem) -> CoresetSelection {
    let n = problem.n_candidates();
    let mut nearest = vec![f64::INFINITY; n];
    let mut selected = Vec::with_capacity(problem.k);
    let mut gains = Vec::with_capacity(problem.k);
    let mut chosen = vec![false; n];
    let mut gain_evals = 0usize;

    for step in 0..problem.k {
        let mut best: Option<(f64, usize)> = None;
        for (j, &taken) in chosen.iter().enumerate() {
            if taken {
                continue;
            }
            gain_evals += 1;
            let gain = marginal_gain(problem, &nearest, j, step == 0);
            let better = match best {
                None => true,
                Some((bg, _)) => gain > bg,
            };
            if better {
                best = Some((gain, j));
            }
        }
        let (gain, j) = best.expect("k <= n guarantees a candidate");
        chosen[j] = true;
        selected.push(j);
        gains.push(gain);
        for (i, nd) in nearest.iter_mut().enumerate() {
            *nd = nd.min(problem.distances.get(i, j));
        }
    }

    let objective = facility_value(problem, &selected).expect("selection is nonempty");
    let weights = assign_weights(problem, &selected).expect("selection is nonempty");
    CoresetSelection {
        indices: selected,
        weights,
        objective,
        gains,
        gain_evals,
    }
}

/// Marginal gain of adding `j` given current nearest-center distances.
fn marginal_gain(problem: &SelectionProblem, nearest: &[f64], j: usize, first: bool) -> f64 {
    if first {
        // f({j}) - f(∅) = C - Σ_i D[i][j].
        let mut total = 0.0;
        for i in 0..nearest.len() {
            total += problem.distances.get(i, j);
        }
        return problem.big_c - total;
    }
    let mut gain = 0.0;
    for (i, &cur) in nearest.iter().enumerate() {
        let d = problem.distances.get(i, j);
        if d < cur {
            gain += cur - d;
        }
    }
    gain
}

/// Heap entry ordered by gain (descending), then candidate index (ascending)
/// so lazy greedy shares plain greedy's tie-breaking.
#[derive(Debug)]
struct HeapEntry {
    gain: f64,
    index: usize,
    /// Selection-set size the gain was computed against.
    stamp: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.gain == other.gain && self.index == other.index
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .partial_cmp(&other.gain)
            .expect("gains are finite")
            .then_with(|| other.index.cmp(&self.index))
    }
}

/// Lazy greedy: identical output to [`greedy_select`], usually far fewer
/// gain evaluations. Stale heap bounds only shrink (submodularity), so an
/// entry whose gain is current may be selected as soon as it surfaces.
pub fn lazy_greedy_select(problem: &SelectionProblem) -> CoresetSelection {
    let n = problem.n_candidates();
    let mut nearest = vec![f64::INFINITY; n];
    let mut selected = Vec::with_capacity(problem.k);
    let mut gains = Vec::with_capacity(problem.k);
    let mut gain_evals = 0usize;

    let mut heap = BinaryHeap::with_capacity(n);
    for j in 0..n {
        gain_evals += 1;
        heap.push(HeapEntry {
            gain: marginal_gain(problem, &nearest, j, true),
            index: j,
            stamp: 0,
        });
    }

    while selected.len() < problem.k {
        let top = heap.pop().expect("heap holds all unselected candidates");
        if top.stamp == selected.len() {
            selected.push(top.index);
            gains.push(top.gain);
            for (i, nd) in nearest.iter_mut().enumerate() {
                *nd = nd.min(problem.distances.get(i, top.index));
            }
        } else {
            gain_evals += 1;
            heap.push(HeapEntry {
                gain: marginal_gain(problem, &nearest, top.index, false),
                index: top.index,
                stamp: selected.len(),
            });
        }
    }

    let objective = facility_value(problem, &selected).expect("selection is nonempty");
    let weights = assign_weights(problem, &selected).expect("selection is nonempty");
    CoresetSelection {
        indices: selected,
        weights,
        objective,
        gains,
        gain_evals,
    }
}

/// Per-center weights: γ_j counts the candidates whose nearest selected
/// center is j, with distance ties broken toward the earliest-selected
/// center. Weights always sum to the candidate count.
pub fn assign_weights(problem: &SelectionProblem, selected: &[usize]) -> Result<Vec<usize>> {
    if selected.is_empty() {
        return Err(invalid("cannot weight an empty selection"));
    }
    let mut weights = vec![0usize; selected.len()];
    for i in 0..problem.n_candidates() {
        let mut best_pos = 0;
        let mut best_dist = problem.distances.get(i, selected[0]);
        for (pos, &j) in selected.iter().enumerate().skip(1) {
            let d = problem.distances.get(i, j);
            if d < best_dist {
                best_dist = d;
                best_pos = pos;
            }
        }
        weights[best_pos] += 1;
    }
    Ok(weights)
}

/// Exact maximizer by enumeration of all subsets of size <= k. Guarded to
/// small instances; ties prefer the lexicographically smallest index set.
pub fn brute_force_select(problem: &SelectionProblem) -> Result<CoresetSelection> {
    let n = problem.n_candidates();
    if n > 14 {
        return Err(Error::TooLarge(format!(
            "brute force enumeration refuses n = {n} > 14"
        )));
    }
    let mut best_set: Option<Vec<usize>> = None;
    let mut best_value = f64::NEG_INFINITY;
    for mask in 1u32..(1 << n) {
        if mask.count_ones() as usize > problem.k {
            continue;
        }
        let subset: Vec<usize> = (0..n).filter(|&j| mask & (1 << j) != 0).collect();
        let value = facility_value(problem, &subset)?;
        let better = value > best_value
            || (value == best_value
                && best_set
                    .as_ref()
                    .map(|cur| subset < *cur)
                    .unwrap_or(true));
        if better {
            best_value = value;
            best_set = Some(subset);
        }
    }
    let indices = best_set.expect("at least one singleton exists");
    let weights = assign_weights(problem, &indices)?;
    Ok(CoresetSelection {
        indices,
        weights,
        objective: best_value,
        gains: Vec::new(),
        gain_evals: 0,
    })
}
