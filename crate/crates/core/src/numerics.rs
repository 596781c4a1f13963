//! Dense vector kernels, pairwise distances, and seeded randomness.
//!
//! Everything here is `f64`: the curvature EMAs and validity ratios computed
//! downstream are ill-conditioned in single precision once losses get small.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{invalid, Result};

/// Deterministic counter-based generator. Identical seed and call sequence
/// produce identical outputs; independent streams are derived by index so
/// concurrent consumers never share state.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive an independent stream keyed by `index`. Derivation mixes the
    /// index into the seed (splitmix64 finalizer), so nested derivations
    /// (per selection event, per subset, ...) stay independent.
    pub fn derive(&self, index: u64) -> SeededRng {
        SeededRng::new(mix64(self.seed ^ index.wrapping_mul(0x9e3779b97f4a7c15)))
    }

    /// Uniform draw in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.inner.sample(rand_distr::StandardNormal)
    }

    /// Sample `k` distinct indices from `[0, n)`, in draw order.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} distinct items from {n}");
        rand::seq::index::sample(&mut self.inner, n, k).into_vec()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

/// splitmix64 finalizer; used only for seed derivation.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Vector of entries drawn uniformly from {+1, -1}.
pub fn sample_rademacher(dim: usize, rng: &mut SeededRng) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(invalid("rademacher dimension must be >= 1"));
    }
    Ok((0..dim)
        .map(|_| if rng.inner.gen::<bool>() { 1.0 } else { -1.0 })
        .collect())
}

/// Euclidean norm.
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `a += c * b`.
pub fn axpy(a: &mut [f64], c: f64, b: &[f64]) {
    debug_assert_eq!(a.len(), b.len());
    for (x, y) in a.iter_mut().zip(b) {
        *x += c * y;
    }
}

pub fn scale(v: &mut [f64], c: f64) {
    for x in v.iter_mut() {
        *x *= c;
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Symmetric matrix of pairwise Euclidean distances with an exactly-zero
/// diagonal.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.iter().cloned().fold(0.0, f64::max)
    }

    /// Test hook: invariants (symmetry, zero diagonal, nonnegativity) as a
    /// checkable report. Used by the self-test path.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for i in 0..self.n {
            if self.get(i, i) != 0.0 {
                return Err(format!("distance matrix diagonal nonzero at {i}"));
            }
            for j in 0..i {
                let (a, b) = (self.get(i, j), self.get(j, i));
                if a != b {
                    return Err(format!("distance matrix asymmetric at ({i},{j})"));
                }
                if a < 0.0 {
                    return Err(format!("negative distance at ({i},{j})"));
                }
            }
        }
        Ok(())
    }

    /// Test hook: force an asymmetry so invariant checks can be exercised.
    pub fn inject_asymmetry(&mut self) {
        if self.n >= 2 {
            self.entries[1] += 1.0;
        }
    }
}

/// Pairwise Euclidean distances between `rows`. All rows must share one
/// dimension.
pub fn pairwise_distances(rows: &[Vec<f64>]) -> Result<DistanceMatrix> {
    let n = rows.len();
    if n == 0 {
        return Err(invalid("pairwise_distances needs at least one row"));
    }
    let d = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != d {
            return Err(invalid(format!(
                "row {i} has dimension {} but row 0 has {d}",
                r.len()
            )));
        }
    }
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let dist = euclidean(&rows[i], &rows[j]);
            entries[i * n + j] = dist;
            entries[j * n + i] = dist;
        }
    }
    Ok(DistanceMatrix { n, entries })
}

/// Central-difference gradient estimate of `f` at `w`.
///
/// Test oracle for the analytic gradients in `models`; second-order accurate.
pub fn finite_diff_gradient<F: Fn(&[f64]) -> f64>(f: F, w: &[f64], step: f64) -> Vec<f64> {
    assert!(step > 0.0, "finite difference step must be positive");
    let mut probe = w.to_vec();
    let mut grad = vec![0.0; w.len()];
    for i in 0..w.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe);
        probe[i] = orig - step;
        let down = f(&probe);
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * step);
    }
    grad
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rademacher_codomain_and_smallest_case() {
        let mut rng = SeededRng::new(7);
        let v = sample_rademacher(4, &mut rng).unwrap();
        assert_eq!(v.len(), 4);
        assert!(v.iter().all(|&x| x == 1.0 || x == -1.0));

        let one = sample_rademacher(1, &mut SeededRng::new(3)).unwrap();
        assert!(one[0] == 1.0 || one[0] == -1.0);

        assert!(sample_rademacher(0, &mut rng).is_err());
    }

    #[test]
    fn rademacher_entries_square_to_one() {
        let mut rng = SeededRng::new(11);
        for _ in 0..100 {
            let v = sample_rademacher(16, &mut rng).unwrap();
            assert!(v.iter().all(|&x| x * x == 1.0));
        }
    }

    #[test]
    fn rademacher_mean_law_of_large_numbers() {
        let mut rng = SeededRng::new(42);
        let mut sum = 0.0;
        for _ in 0..100_000 {
            sum += sample_rademacher(3, &mut rng).unwrap()[0];
        }
        assert!(
            (sum / 100_000.0).abs() < 0.02,
            "entry-0 mean {} outside LLN bound",
            sum / 100_000.0
        );
    }

    #[test]
    fn pairwise_345_triangle() {
        let d = pairwise_distances(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(d.get(0, 1), 5.0);
        assert_eq!(d.get(1, 0), 5.0);
        assert_eq!(d.get(0, 0), 0.0);
    }

    #[test]
    fn pairwise_single_row() {
        let d = pairwise_distances(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(d.n(), 1);
        assert_eq!(d.get(0, 0), 0.0);
    }

    #[test]
    fn pairwise_rejects_mismatched_dims() {
        assert!(pairwise_distances(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn pairwise_matches_double_loop() {
        let mut rng = SeededRng::new(9);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.uniform() * 4.0 - 2.0).collect())
            .collect();
        let d = pairwise_distances(&rows).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let direct: f64 = (0..3)
                    .map(|k| (rows[i][k] - rows[j][k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert_eq!(d.get(i, j), direct);
            }
        }
    }

    #[test]
    fn pairwise_triangle_inequality_sampled() {
        let mut rng = SeededRng::new(13);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..4).map(|_| rng.normal()).collect())
            .collect();
        let d = pairwise_distances(&rows).unwrap();
        for _ in 0..1000 {
            let (i, j, k) = (rng.index(20), rng.index(20), rng.index(20));
            assert!(d.get(i, k) <= d.get(i, j) + d.get(j, k) + 1e-12);
        }
    }

    #[test]
    fn l2_norm_cases() {
        assert_eq!(l2_norm(&[3.0, 4.0]), 5.0);
        assert_eq!(l2_norm(&[0.0; 7]), 0.0);
        let mut rng = SeededRng::new(5);
        let v: Vec<f64> = (0..10).map(|_| rng.normal()).collect();
        let direct = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert_eq!(l2_norm(&v), direct);
    }

    #[test]
    fn finite_diff_on_quadratic() {
        let g = finite_diff_gradient(|w| dot(w, w), &[1.0, 2.0], 1e-5);
        assert!((g[0] - 2.0).abs() < 1e-6);
        assert!((g[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_constant_is_zero() {
        let g = finite_diff_gradient(|_| 3.5, &[0.3, -0.7, 1.1], 1e-5);
        assert!(g.iter().all(|x| x.abs() < 1e-8));
    }

    #[test]
    fn finite_diff_logistic_matches_analytic() {
        // f(w) = ln(1 + exp(-y w.x)) with fixed x, y.
        let x = [0.4, -1.2, 0.9];
        let y = 1.0;
        let f = |w: &[f64]| (1.0 + (-y * dot(w, &x)).exp()).ln();
        let w = [0.2, 0.1, -0.5];
        let fd = finite_diff_gradient(f, &w, 1e-5);
        let s = 1.0 / (1.0 + (y * dot(&w, &x)).exp());
        let analytic: Vec<f64> = x.iter().map(|xi| -y * s * xi).collect();
        let num = analytic
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(num / l2_norm(&analytic) < 1e-5);
    }

    #[test]
    fn seeded_rng_determinism() {
        let mut a = SeededRng::new(99);
        let mut b = SeededRng::new(99);
        for _ in 0..50 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut da = a.derive(3);
        let mut db = b.derive(3);
        assert_eq!(da.next_u64(), db.next_u64());
    }

    #[test]
    fn derived_streams_differ() {
        let root = SeededRng::new(1);
        let mut s0 = root.derive(0);
        let mut s1 = root.derive(1);
        assert_ne!(s0.next_u64(), s1.next_u64());
    }

    #[test]
    fn distance_invariant_hook_catches_injection() {
        let mut d = pairwise_distances(&[vec![0.0], vec![1.0], vec![3.0]]).unwrap();
        assert!(d.check_invariants().is_ok());
        d.inject_asymmetry();
        let err = d.check_invariants().unwrap_err();
        assert!(err.contains("asymmetric"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rademacher_entries_square_to_one(seed in any::<u64>(), dim in 1usize..64) {
                let mut rng = SeededRng::new(seed);
                let v = sample_rademacher(dim, &mut rng).unwrap();
                prop_assert!(v.iter().all(|&x| x * x == 1.0));
            }

            #[test]
            fn distances_are_symmetric_with_zero_diagonal(
                seed in any::<u64>(),
                n in 1usize..12,
                dim in 1usize..5,
            ) {
                let mut rng = SeededRng::new(seed);
                let rows: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..dim).map(|_| rng.normal()).collect())
                    .collect();
                let d = pairwise_distances(&rows).unwrap();
                prop_assert!(d.check_invariants().is_ok());
            }
        }
    }
}
