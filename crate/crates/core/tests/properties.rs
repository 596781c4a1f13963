//! Cross-module properties: pool selection behavior, estimator bias and
//! variance structure, normalized-bias identities, and drop safety.

use crest_core::models::{
    generate_synthetic, mean_grad, Dataset, Example, Model, ModelHandle, SyntheticSpec,
};
use crest_core::numerics::{l2_norm, SeededRng};
use crest_core::submodular::{facility_value, SelectionProblem};
use crest_core::trainer::{
    gradient_estimator_diagnostics, normalized_bias, run_crest, run_random_baseline, select_pool,
    GradientEstimator, MiniBatchCoreset, TrainerConfig,
};

fn random_params(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| 0.4 * rng.normal()).collect()
}

/// Mid-training snapshot: a few hundred SGD steps on a synthetic problem.
fn snapshot(dataset: &Dataset, model: &ModelHandle, steps: u64) -> Vec<f64> {
    let config = TrainerConfig {
        total_iterations: steps,
        batch_size: 16,
        seed: 2,
        ..TrainerConfig::default()
    };
    run_random_baseline(&config, model, dataset)
        .unwrap()
        .final_params
}

#[test]
fn select_pool_degenerates_to_subset_when_r_equals_m() {
    let ds = generate_synthetic(&SyntheticSpec::balanced(40, 3, 2, 0.6), 3).unwrap();
    let model = ModelHandle::softmax_regression(3, 2);
    let mut rng = SeededRng::new(8);
    let w = random_params(&mut rng, model.param_count());
    let outcome = select_pool(&model, &w, &ds, 8, 8, 3, 0, &SeededRng::new(5)).unwrap();
    for batch in &outcome.pool.batches {
        let mut selected = batch.selected.clone();
        selected.sort_unstable();
        let mut source = batch.source_subset.clone();
        source.sort_unstable();
        assert_eq!(selected, source, "selection is the whole subset");
        assert!(batch.weights.iter().all(|&g| g == 1));
    }
}

#[test]
fn select_pool_falls_back_when_active_set_is_small() {
    // Fewer active examples than the batch size: one coreset holding the
    // whole active set at unit weights.
    let mut ds = generate_synthetic(&SyntheticSpec::balanced(10, 3, 2, 0.4), 3).unwrap();
    for i in 0..6 {
        ds.deactivate(i);
    }
    let model = ModelHandle::softmax_regression(3, 2);
    let w = vec![0.0; 6];
    let outcome = select_pool(&model, &w, &ds, 8, 8, 4, 5, &SeededRng::new(2)).unwrap();
    assert!(outcome.degenerate);
    assert_eq!(outcome.pool.len(), 1);
    let batch = &outcome.pool.batches[0];
    assert_eq!(batch.selected, ds.active_indices());
    assert!(batch.weights.iter().all(|&g| g == 1));
    assert_eq!(outcome.touches, 4);
}

#[test]
fn single_example_interval_is_one_vanilla_sgd_step() {
    // Batch size 1, one-coreset pool, no momentum, no warmup: the first
    // interval is exactly one plain gradient step on the selected example.
    let ds = generate_synthetic(&SyntheticSpec::balanced(30, 3, 2, 0.3), 8).unwrap();
    let model = ModelHandle::softmax_regression(3, 2);
    let config = TrainerConfig {
        total_iterations: 1,
        batch_size: 1,
        subset_size: Some(1),
        initial_pool: 1,
        momentum: 0.0,
        warmup_frac: 0.0,
        learning_rate: 0.05,
        seed: 4,
        ..TrainerConfig::default()
    };
    let run = run_crest(&config, &model, &ds).unwrap();

    let selected: Vec<usize> = (0..ds.len())
        .filter(|&i| run.selection_counts[i] > 0)
        .collect();
    assert_eq!(selected.len(), 1, "one coreset of one example");
    let w0 = vec![0.0; 6];
    let g = crest_core::models::Model::grad(&model, &w0, ds.example(selected[0])).unwrap();
    for (after, gi) in run.final_params.iter().zip(&g) {
        assert!((after - (-0.05 * gi)).abs() < 1e-15);
    }
}

#[test]
fn select_pool_is_seed_deterministic() {
    let ds = generate_synthetic(&SyntheticSpec::balanced(60, 3, 2, 0.6), 4).unwrap();
    let model = ModelHandle::softmax_regression(3, 2);
    let mut rng = SeededRng::new(9);
    let w = random_params(&mut rng, model.param_count());
    let a = select_pool(&model, &w, &ds, 6, 12, 4, 0, &SeededRng::new(31)).unwrap();
    let b = select_pool(&model, &w, &ds, 6, 12, 4, 0, &SeededRng::new(31)).unwrap();
    assert_eq!(a.pool.batches, b.pool.batches);
    assert_eq!(a.observations, b.observations);
}

#[test]
fn select_pool_pair_covers_both_clusters() {
    // Two clusters of exactly duplicated points with opposite labels. A
    // 2-element coreset must take one point from each cluster; every
    // same-cluster pair scores strictly lower facility value.
    let mut examples = Vec::new();
    for _ in 0..4 {
        examples.push(Example {
            features: vec![2.0, 0.0],
            label: 0,
        });
    }
    for _ in 0..4 {
        examples.push(Example {
            features: vec![-2.0, 1.0],
            label: 1,
        });
    }
    let ds = Dataset::new(examples, 2).unwrap();
    let model = ModelHandle::softmax_regression(2, 2);
    let w = vec![0.0; model.param_count()];
    let outcome = select_pool(&model, &w, &ds, 2, 8, 1, 0, &SeededRng::new(1)).unwrap();
    let batch = &outcome.pool.batches[0];
    let cluster = |idx: usize| usize::from(idx >= 4);
    assert_ne!(
        cluster(batch.selected[0]),
        cluster(batch.selected[1]),
        "selected pair must span both clusters"
    );

    // Enumerate all pairs on the same problem and compare objectives.
    let llgs: Vec<Vec<f64>> = batch
        .source_subset
        .iter()
        .map(|&i| model.last_layer_grad(&w, ds.example(i)).unwrap())
        .collect();
    let problem = SelectionProblem::new(
        crest_core::numerics::pairwise_distances(&llgs).unwrap(),
        2,
    )
    .unwrap();
    let pos_of = |ds_idx: usize| {
        batch
            .source_subset
            .iter()
            .position(|&i| i == ds_idx)
            .unwrap()
    };
    let chosen = facility_value(
        &problem,
        &[pos_of(batch.selected[0]), pos_of(batch.selected[1])],
    )
    .unwrap();
    for a in 0..8 {
        for b in (a + 1)..8 {
            if cluster(batch.source_subset[a]) == cluster(batch.source_subset[b]) {
                let same = facility_value(&problem, &[a, b]).unwrap();
                assert!(chosen > same, "cross-cluster pair must beat {a},{b}");
            }
        }
    }
}

#[test]
fn coreset_estimator_with_r_equals_m_is_statistically_unbiased() {
    // With r = m selection keeps the whole subset at unit weights, so the
    // estimator is exactly uniform mini-batch sampling.
    let ds = generate_synthetic(&SyntheticSpec::balanced(500, 4, 2, 0.8), 11).unwrap();
    let model = ModelHandle::softmax_regression(4, 2);
    let w = snapshot(&ds, &model, 150);
    let mut rng = SeededRng::new(21);
    let diag = gradient_estimator_diagnostics(
        &model,
        &w,
        &ds,
        &GradientEstimator::MiniBatchCoreset { m: 16, r: 16 },
        2000,
        &mut rng,
    )
    .unwrap();
    assert!(
        diag.bias < 3.0 * diag.std_error,
        "bias {} vs 3 SE {}",
        diag.bias,
        3.0 * diag.std_error
    );
}

#[test]
fn random_batch_bias_is_statistically_zero() {
    let ds = generate_synthetic(&SyntheticSpec::balanced(400, 3, 2, 0.7), 13).unwrap();
    let model = ModelHandle::softmax_regression(3, 2);
    let w = snapshot(&ds, &model, 120);
    let mut rng = SeededRng::new(5);
    let diag = gradient_estimator_diagnostics(
        &model,
        &w,
        &ds,
        &GradientEstimator::RandomBatch { m: 16 },
        2000,
        &mut rng,
    )
    .unwrap();
    assert!(diag.bias < 3.0 * diag.std_error);
}

#[test]
fn full_gradient_estimator_has_zero_bias_and_variance() {
    let ds = generate_synthetic(&SyntheticSpec::balanced(50, 3, 2, 0.5), 7).unwrap();
    let model = ModelHandle::softmax_regression(3, 2);
    let mut rng = SeededRng::new(3);
    let w = random_params(&mut rng, model.param_count());
    let diag = gradient_estimator_diagnostics(
        &model,
        &w,
        &ds,
        &GradientEstimator::FullGradient,
        10,
        &mut rng,
    )
    .unwrap();
    // Bias is the norm of an average of identical vectors; only accumulation
    // rounding remains. Deviations from the full gradient are exactly zero.
    assert!(diag.bias < 1e-12, "bias {}", diag.bias);
    assert_eq!(diag.variance, 0.0);
}

#[test]
fn random_batch_variance_scales_inversely_with_batch_size() {
    let ds = generate_synthetic(&SyntheticSpec::balanced(2000, 6, 2, 0.9), 29).unwrap();
    let model = ModelHandle::softmax_regression(6, 2);
    let w = snapshot(&ds, &model, 200);
    let mut rng = SeededRng::new(17);
    let small = gradient_estimator_diagnostics(
        &model,
        &w,
        &ds,
        &GradientEstimator::RandomBatch { m: 16 },
        2000,
        &mut rng,
    )
    .unwrap();
    let large = gradient_estimator_diagnostics(
        &model,
        &w,
        &ds,
        &GradientEstimator::RandomBatch { m: 64 },
        2000,
        &mut rng,
    )
    .unwrap();
    let predicted = small.variance * 16.0 / 64.0;
    let rel = (large.variance - predicted).abs() / predicted;
    assert!(
        rel < 0.25,
        "variance ratio off by {rel}: large {} predicted {predicted}",
        large.variance
    );
}

#[test]
fn normalized_bias_zero_when_pool_covers_active_set() {
    let ds = generate_synthetic(&SyntheticSpec::balanced(30, 3, 2, 0.5), 37).unwrap();
    let model = ModelHandle::softmax_regression(3, 2);
    let mut rng = SeededRng::new(41);
    let w = random_params(&mut rng, model.param_count());
    let all: Vec<usize> = (0..ds.len()).collect();
    let batch = MiniBatchCoreset {
        source_subset: all.clone(),
        selected: all.clone(),
        weights: vec![1; ds.len()],
        selected_at: 0,
    };
    let pool = crest_core::trainer::CoresetPool::new(vec![batch]);
    let nb = normalized_bias(&model, &w, &pool, &ds).unwrap();
    assert!(nb.value < 1e-15, "exact cover has zero bias, got {}", nb.value);
}

#[test]
fn normalized_bias_matches_hand_computation_on_two_points() {
    // Features 1 and 2, labels 0 and 1, w = 0: the single-center coreset
    // with weight 2 gives eps = ||g0 - mean|| / ||mean|| = 3 exactly.
    let ds = Dataset::new(
        vec![
            Example {
                features: vec![1.0],
                label: 0,
            },
            Example {
                features: vec![2.0],
                label: 1,
            },
        ],
        2,
    )
    .unwrap();
    let model = ModelHandle::softmax_regression(1, 2);
    let w = vec![0.0; 2];
    let batch = MiniBatchCoreset {
        source_subset: vec![0, 1],
        selected: vec![0],
        weights: vec![2],
        selected_at: 0,
    };
    let pool = crest_core::trainer::CoresetPool::new(vec![batch]);
    let nb = normalized_bias(&model, &w, &pool, &ds).unwrap();
    assert!((nb.value - 3.0).abs() < 1e-12, "got {}", nb.value);
}

#[test]
fn normalized_bias_zero_on_duplicated_dataset_with_double_weights() {
    let base = generate_synthetic(&SyntheticSpec::balanced(6, 3, 2, 0.5), 43).unwrap();
    let mut examples: Vec<Example> = (0..6).map(|i| base.example(i).clone()).collect();
    examples.extend(examples.clone());
    let ds = Dataset::new(examples, 2).unwrap();
    let model = ModelHandle::softmax_regression(3, 2);
    let mut rng = SeededRng::new(47);
    let w = random_params(&mut rng, model.param_count());
    let batch = MiniBatchCoreset {
        source_subset: (0..12).collect(),
        selected: (0..6).collect(),
        weights: vec![2; 6],
        selected_at: 0,
    };
    let pool = crest_core::trainer::CoresetPool::new(vec![batch]);
    let nb = normalized_bias(&model, &w, &pool, &ds).unwrap();
    assert!(nb.value < 1e-12, "exact duplicate cover, got {}", nb.value);
}

#[test]
fn dropped_examples_stay_learned_on_convex_problem() {
    let ds = generate_synthetic(&SyntheticSpec::balanced(300, 4, 3, 0.3), 51).unwrap();
    let model = ModelHandle::softmax_regression(4, 3);
    let config = TrainerConfig {
        total_iterations: 600,
        batch_size: 16,
        subset_size: Some(24),
        seed: 1,
        ..TrainerConfig::default()
    };
    let run = run_crest(&config, &model, &ds).unwrap();
    assert!(
        !run.dropped.is_empty(),
        "expected drops on an easy convex problem"
    );
    let at_drop: f64 =
        run.dropped.iter().map(|d| d.loss_at_drop).sum::<f64>() / run.dropped.len() as f64;
    let at_end: f64 =
        run.dropped.iter().map(|d| d.final_loss).sum::<f64>() / run.dropped.len() as f64;
    assert!(
        at_end <= 2.0 * at_drop,
        "dropped examples regressed: end {at_end} vs drop-time {at_drop}"
    );
}

#[test]
fn separable_point_masses_reach_zero_loss_under_gd() {
    // Zero-spread clusters are two point masses: full-batch descent drives
    // the loss toward zero on any linear separator's path.
    let ds = generate_synthetic(&SyntheticSpec::balanced(100, 2, 2, 0.0), 53).unwrap();
    let model = ModelHandle::softmax_regression(2, 2);
    let config = TrainerConfig {
        total_iterations: 400,
        batch_size: ds.len(),
        seed: 3,
        ..TrainerConfig::default()
    };
    let run = run_random_baseline(&config, &model, &ds).unwrap();
    assert!(run.final_loss < 0.05, "final loss {}", run.final_loss);
    assert_eq!(run.final_acc, 1.0);
}

#[test]
fn crest_trains_to_high_accuracy_on_clustered_data() {
    let ds = generate_synthetic(&SyntheticSpec::balanced(200, 3, 2, 0.15), 53).unwrap();
    let model = ModelHandle::softmax_regression(3, 2);
    let config = TrainerConfig {
        total_iterations: 400,
        batch_size: 8,
        subset_size: Some(16),
        seed: 3,
        ..TrainerConfig::default()
    };
    let run = run_crest(&config, &model, &ds).unwrap();
    assert!(run.final_acc > 0.95, "final acc {}", run.final_acc);
    assert!(run.final_loss < 0.5, "final loss {}", run.final_loss);
}

#[test]
fn aggregate_ema_scope_runs_end_to_end() {
    let ds = generate_synthetic(&SyntheticSpec::balanced(120, 3, 2, 0.15), 61).unwrap();
    let model = ModelHandle::softmax_regression(3, 2);
    let config = TrainerConfig {
        total_iterations: 150,
        batch_size: 8,
        subset_size: Some(12),
        ema_scope: crest_core::quadmodel::EmaScope::CoresetAggregate,
        seed: 6,
        ..TrainerConfig::default()
    };
    let a = run_crest(&config, &model, &ds).unwrap();
    let b = run_crest(&config, &model, &ds).unwrap();
    assert!(a.same_results(&b));
    assert!(a.final_acc > 0.9);
    // The smoothing scope changes the surrogate, so trajectories diverge
    // from the per-example default.
    let lazy = run_crest(
        &TrainerConfig {
            ema_scope: crest_core::quadmodel::EmaScope::Lazy,
            ..config
        },
        &model,
        &ds,
    )
    .unwrap();
    assert!(!a.same_results(&lazy));
}

#[test]
fn frozen_hutchinson_probes_still_deterministic() {
    let ds = generate_synthetic(&SyntheticSpec::balanced(120, 3, 2, 0.15), 67).unwrap();
    let model = ModelHandle::softmax_regression(3, 2);
    let config = TrainerConfig {
        total_iterations: 100,
        batch_size: 8,
        subset_size: Some(12),
        redraw_hutchinson: false,
        seed: 2,
        ..TrainerConfig::default()
    };
    let a = run_crest(&config, &model, &ds).unwrap();
    let b = run_crest(&config, &model, &ds).unwrap();
    assert!(a.same_results(&b));
}

/// Shared quadratic bowl, independent of the example: gradient descent
/// converges linearly, so the probe loss reaches the ratio floor fast.
struct QuadraticBowl {
    target: Vec<f64>,
}

impl Model for QuadraticBowl {
    fn param_count(&self) -> usize {
        self.target.len()
    }
    fn output_dim(&self) -> usize {
        2
    }
    fn loss(&self, w: &[f64], _ex: &Example) -> crest_core::Result<f64> {
        Ok(0.5
            * w.iter()
                .zip(&self.target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>())
    }
    fn grad(&self, w: &[f64], _ex: &Example) -> crest_core::Result<Vec<f64>> {
        Ok(w.iter().zip(&self.target).map(|(a, b)| a - b).collect())
    }
    fn last_layer_grad(&self, _w: &[f64], _ex: &Example) -> crest_core::Result<Vec<f64>> {
        Ok(vec![0.0; 2])
    }
    fn hvp_single(&self, _w: &[f64], _ex: &Example, v: &[f64]) -> crest_core::Result<Vec<f64>> {
        Ok(v.to_vec())
    }
}

#[test]
fn vanished_probe_loss_marks_run_converged() {
    // Linear convergence drives the sampled loss under the ratio floor; the
    // check must flag convergence and keep the pool instead of dividing.
    let ds = generate_synthetic(&SyntheticSpec::balanced(30, 2, 2, 0.1), 71).unwrap();
    let model = QuadraticBowl {
        target: vec![0.7, -0.3, 1.1],
    };
    let config = TrainerConfig {
        total_iterations: 400,
        batch_size: 8,
        subset_size: Some(10),
        learning_rate: 0.1,
        drop_threshold: 0.0, // keep every example active
        seed: 5,
        ..TrainerConfig::default()
    };
    let run = run_crest(&config, &model, &ds).unwrap();
    assert!(run.converged, "floor-level loss must set the converged flag");
    assert!(run.final_loss < 1e-12);
    // Convergence keeps the pool: no refresh may follow the flag.
    let first_converged = run
        .intervals
        .iter()
        .position(|r| r.loss_vr <= 1e-12)
        .expect("a floor-level check exists");
    assert!(run.intervals[first_converged..].iter().all(|r| !r.refreshed));
}

#[test]
fn query_counter_tracks_recorded_events() {
    let ds = generate_synthetic(&SyntheticSpec::balanced(200, 3, 2, 0.5), 59).unwrap();
    let model = ModelHandle::softmax_regression(3, 2);
    let config = TrainerConfig {
        total_iterations: 150,
        batch_size: 8,
        subset_size: Some(16),
        seed: 4,
        ..TrainerConfig::default()
    };
    let run = run_crest(&config, &model, &ds).unwrap();
    assert!(run.grad_queries_total <= run.query_allowance);
    // Queries grow monotonically across interval records.
    for pair in run.intervals.windows(2) {
        assert!(pair[0].grad_queries_cum <= pair[1].grad_queries_cum);
    }
    let full = mean_grad(&model, &run.final_params, &ds, &(0..ds.len()).collect::<Vec<_>>())
        .unwrap();
    assert!(l2_norm(&full).is_finite());
}
