//! Run records emitted by the trainers.
//!
//! Everything except wall-clock fields is a pure function of config and
//! seed; [`RunMetrics::same_results`] compares runs with timing excluded.

/// One row per validity-check interval.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRecord {
    pub iter: u64,
    pub t1: u64,
    pub p: usize,
    /// Validity ratio at this check; NaN for baselines that have none.
    pub rho: f64,
    pub refreshed: bool,
    pub active_n: usize,
    pub loss_vr: f64,
    pub acc_vr: f64,
    pub grad_queries_cum: u64,
    pub wall_ms_cum: u64,
}

/// One row per coreset (re)selection event.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    pub iter: u64,
    pub t1: u64,
    pub p: usize,
    /// Validity ratio that triggered this refresh; NaN on the initial build.
    pub rho_trigger: f64,
    /// Curvature-norm ratio used for the interval rule; NaN on the initial
    /// build.
    pub hnorm_ratio: f64,
    pub union_size: usize,
}

/// Estimator- or pool-level gradient diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRecord {
    pub iter: u64,
    pub estimator: String,
    pub bias: Option<f64>,
    pub variance: Option<f64>,
    pub normalized_bias: Option<f64>,
}

/// Bookkeeping for an example removed from the selection ground set.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedExample {
    pub index: usize,
    pub iter: u64,
    pub loss_at_drop: f64,
    /// Loss in the end-of-run full pass; populated at finalization.
    pub final_loss: f64,
}

/// Full record of one training run.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub method: String,
    pub seed: u64,
    pub intervals: Vec<IntervalRecord>,
    pub updates: Vec<UpdateRecord>,
    pub diagnostics: Vec<DiagnosticRecord>,
    pub dropped: Vec<DroppedExample>,
    /// How many times each example entered a selected coreset.
    pub selection_counts: Vec<u64>,
    /// Correct-to-incorrect transition counts on probe observations;
    /// `None` marks never-observed examples.
    pub forgetting: Vec<Option<u64>>,
    pub final_loss: f64,
    pub final_acc: f64,
    pub final_params: Vec<f64>,
    pub updates_total: u64,
    /// Example evaluations spent by the algorithm itself (selection passes,
    /// training steps, validity checks). One count per example per pass:
    /// surrogate work at the anchor reuses the selection touch.
    pub grad_queries_total: u64,
    /// Upper bound implied by the schedule: selections * r * P plus
    /// training steps * m plus checks * r.
    pub query_allowance: u64,
    /// Example evaluations spent on diagnostics only (bias probes, final
    /// full pass); never part of the algorithm budget.
    pub diag_queries_total: u64,
    pub wall_ms_total: u64,
    /// The sampled loss hit the floor during a validity check.
    pub converged: bool,
    /// Selection events where the active set was smaller than the batch
    /// size and the pool fell back to the whole active set.
    pub degenerate_selections: u64,
    /// Drop decisions truncated by the keep-at-least-m guard.
    pub drop_guard_hits: u64,
}

impl RunMetrics {
    pub fn new(method: &str, seed: u64, n_examples: usize) -> Self {
        Self {
            method: method.to_string(),
            seed,
            intervals: Vec::new(),
            updates: Vec::new(),
            diagnostics: Vec::new(),
            dropped: Vec::new(),
            selection_counts: vec![0; n_examples],
            forgetting: vec![None; n_examples],
            final_loss: f64::NAN,
            final_acc: f64::NAN,
            final_params: Vec::new(),
            updates_total: 0,
            grad_queries_total: 0,
            query_allowance: 0,
            diag_queries_total: 0,
            wall_ms_total: 0,
            converged: false,
            degenerate_selections: 0,
            drop_guard_hits: 0,
        }
    }

    /// Equality of everything deterministic (wall-clock fields excluded).
    pub fn same_results(&self, other: &RunMetrics) -> bool {
        self.method == other.method
            && self.seed == other.seed
            && self.intervals.len() == other.intervals.len()
            && self
                .intervals
                .iter()
                .zip(&other.intervals)
                .all(|(a, b)| {
                    let mut x = a.clone();
                    let mut y = b.clone();
                    x.wall_ms_cum = 0;
                    y.wall_ms_cum = 0;
                    float_eq(x.rho, y.rho)
                        && float_eq(x.loss_vr, y.loss_vr)
                        && float_eq(x.acc_vr, y.acc_vr)
                        && (x.iter, x.t1, x.p, x.refreshed, x.active_n, x.grad_queries_cum)
                            == (y.iter, y.t1, y.p, y.refreshed, y.active_n, y.grad_queries_cum)
                })
            && self.updates.len() == other.updates.len()
            && self
                .updates
                .iter()
                .zip(&other.updates)
                .all(|(a, b)| {
                    (a.iter, a.t1, a.p, a.union_size) == (b.iter, b.t1, b.p, b.union_size)
                        && float_eq(a.rho_trigger, b.rho_trigger)
                        && float_eq(a.hnorm_ratio, b.hnorm_ratio)
                })
            && self.diagnostics == other.diagnostics
            && self.dropped == other.dropped
            && self.selection_counts == other.selection_counts
            && self.forgetting == other.forgetting
            && float_eq(self.final_loss, other.final_loss)
            && float_eq(self.final_acc, other.final_acc)
            && self.final_params == other.final_params
            && self.updates_total == other.updates_total
            && self.grad_queries_total == other.grad_queries_total
            && self.diag_queries_total == other.diag_queries_total
            && self.converged == other.converged
            && self.degenerate_selections == other.degenerate_selections
            && self.drop_guard_hits == other.drop_guard_hits
    }

    /// Refresh count inside an inclusive iteration range.
    pub fn refreshes_in(&self, from: u64, to: u64) -> usize {
        self.intervals
            .iter()
            .filter(|r| r.refreshed && r.iter >= from && r.iter <= to)
            .count()
    }
}

/// Bitwise float equality that also matches NaN with NaN.
fn float_eq(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits()
}
