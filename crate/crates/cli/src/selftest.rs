//! Fast self-check of the numerical core: greedy optimality against the
//! exact oracle, lazy/greedy agreement, Hutchinson identities, derivative
//! checks, EMA identities, and distance-matrix invariants.
//!
//! Each property prints one PASS/FAIL line. The `inject` hook corrupts one
//! structure on purpose so the harness's failure path can be exercised.

use crest_core::models::{generate_synthetic, Example, Model, ModelHandle, SyntheticSpec};
use crest_core::numerics::{
    finite_diff_gradient, l2_norm, pairwise_distances, sample_rademacher, SeededRng,
};
use crest_core::quadmodel::{hutchinson_diag, EmaStats};
use crest_core::submodular::{
    brute_force_select, greedy_select, lazy_greedy_select, SelectionProblem,
};

pub struct Report {
    pub lines: Vec<String>,
    pub total: usize,
    pub failed: usize,
}

/// Known fault-injection hooks for testing the failure path.
pub const INJECT_DISTANCE_ASYMMETRY: &str = "distance-asymmetry";

pub fn run(inject: Option<&str>) -> Report {
    let mut lines = Vec::new();
    let mut failed = 0usize;
    let mut check = |name: &str, result: Result<(), String>| match result {
        Ok(()) => lines.push(format!("PASS {name}")),
        Err(msg) => {
            failed += 1;
            lines.push(format!("FAIL {name}: {msg}"));
        }
    };

    check("distance-matrix-invariants", distance_invariants(inject));
    check("greedy-vs-brute-force", greedy_vs_oracle());
    check("lazy-equals-greedy", lazy_equals_greedy());
    check("hutchinson-diagonal-exactness", hutchinson_exact());
    check("rademacher-codomain", rademacher_codomain());
    check("gradient-finite-difference", gradient_check());
    check("hvp-finite-difference", hvp_check());
    check("ema-identities", ema_identities());

    let total = lines.len();
    Report {
        lines,
        total,
        failed,
    }
}

fn distance_invariants(inject: Option<&str>) -> Result<(), String> {
    let mut rng = SeededRng::new(101);
    let rows: Vec<Vec<f64>> = (0..12)
        .map(|_| (0..3).map(|_| rng.normal()).collect())
        .collect();
    let mut d = pairwise_distances(&rows).map_err(|e| e.to_string())?;
    if inject == Some(INJECT_DISTANCE_ASYMMETRY) {
        d.inject_asymmetry();
    }
    d.check_invariants()
}

fn greedy_vs_oracle() -> Result<(), String> {
    let mut rng = SeededRng::new(103);
    let floor = 1.0 - 1.0 / std::f64::consts::E;
    for trial in 0..50 {
        let n = 3 + rng.index(8);
        let k = 1 + rng.index(3.min(n));
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..2).map(|_| rng.normal()).collect())
            .collect();
        let problem =
            SelectionProblem::new(pairwise_distances(&rows).unwrap(), k).unwrap();
        let greedy = greedy_select(&problem);
        let brute = brute_force_select(&problem).map_err(|e| e.to_string())?;
        if greedy.objective < floor * brute.objective - 1e-9 {
            return Err(format!(
                "trial {trial}: greedy {} below (1-1/e) x {}",
                greedy.objective, brute.objective
            ));
        }
    }
    Ok(())
}

fn lazy_equals_greedy() -> Result<(), String> {
    let mut rng = SeededRng::new(107);
    for trial in 0..30 {
        let n = 2 + rng.index(40);
        let k = 1 + rng.index(n);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.normal()).collect())
            .collect();
        let problem =
            SelectionProblem::new(pairwise_distances(&rows).unwrap(), k).unwrap();
        let a = greedy_select(&problem);
        let b = lazy_greedy_select(&problem);
        if a.indices != b.indices || a.weights != b.weights {
            return Err(format!("trial {trial}: divergent selections"));
        }
    }
    Ok(())
}

fn hutchinson_exact() -> Result<(), String> {
    let mut rng = SeededRng::new(109);
    for trial in 0..20 {
        let dim = 1 + rng.index(10);
        let diag: Vec<f64> = (0..dim).map(|_| rng.normal() * 2.0).collect();
        let est = hutchinson_diag(
            |z| z.iter().zip(&diag).map(|(zi, di)| di * zi).collect(),
            dim,
            1,
            &mut rng,
        )
        .map_err(|e| e.to_string())?;
        for (e, want) in est.iter().zip(&diag) {
            if (e - want).abs() > 1e-12 {
                return Err(format!("trial {trial}: {e} vs {want}"));
            }
        }
    }
    Ok(())
}

fn rademacher_codomain() -> Result<(), String> {
    let mut rng = SeededRng::new(113);
    for _ in 0..50 {
        let v = sample_rademacher(8, &mut rng).map_err(|e| e.to_string())?;
        if v.iter().any(|&x| x * x != 1.0) {
            return Err("entry outside {+1,-1}".into());
        }
    }
    Ok(())
}

fn test_models() -> Vec<ModelHandle> {
    vec![
        ModelHandle::softmax_regression(4, 3),
        ModelHandle::two_layer_mlp(4, 5, 3),
    ]
}

fn gradient_check() -> Result<(), String> {
    let mut rng = SeededRng::new(127);
    let ds = generate_synthetic(&SyntheticSpec::balanced(20, 4, 3, 0.6), 5).unwrap();
    for (trial, model) in (0..10).flat_map(|t| test_models().into_iter().map(move |m| (t, m))) {
        let w: Vec<f64> = (0..model.param_count()).map(|_| 0.4 * rng.normal()).collect();
        let ex: &Example = ds.example(rng.index(ds.len()));
        let grad = model.grad(&w, ex).map_err(|e| e.to_string())?;
        let fd = finite_diff_gradient(|p| model.loss(p, ex).unwrap(), &w, 1e-5);
        let diff: f64 = grad
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if diff / l2_norm(&fd).max(1e-8) > 1e-5 {
            return Err(format!("trial {trial}: gradient mismatch"));
        }
    }
    Ok(())
}

fn hvp_check() -> Result<(), String> {
    let mut rng = SeededRng::new(131);
    let ds = generate_synthetic(&SyntheticSpec::balanced(20, 4, 3, 0.6), 6).unwrap();
    for (trial, model) in (0..5).flat_map(|t| test_models().into_iter().map(move |m| (t, m))) {
        let dim = model.param_count();
        let w: Vec<f64> = (0..dim).map(|_| 0.4 * rng.normal()).collect();
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let ex = ds.example(rng.index(ds.len()));
        let hv = model.hvp_single(&w, ex, &v).map_err(|e| e.to_string())?;
        let h = 1e-5;
        let wp: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a + h * b).collect();
        let wm: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a - h * b).collect();
        let gp = model.grad(&wp, ex).unwrap();
        let gm = model.grad(&wm, ex).unwrap();
        let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let diff: f64 = hv
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if diff / l2_norm(&fd).max(1e-8) > 1e-4 {
            return Err(format!("trial {trial}: hvp mismatch"));
        }
    }
    Ok(())
}

fn ema_identities() -> Result<(), String> {
    let mut stats = EmaStats::new(0.9, 0.99, 3);
    let g = vec![0.5, -1.5, 2.0];
    if stats.update_grad_ema(0, &g) != g {
        return Err("first gradient update is not the identity".into());
    }
    for _ in 0..10 {
        let out = stats.update_grad_ema(0, &g);
        if out.iter().zip(&g).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Err("constant input is not a fixed point".into());
        }
    }
    let d = vec![-2.0, 0.5, 0.0];
    for _ in 0..10 {
        let out = stats.update_hess_ema(0, &d);
        let expect = [2.0, 0.5, 0.0];
        if out.iter().zip(&expect).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Err("squared-diag EMA does not recover |d|".into());
        }
    }
    Ok(())
}
