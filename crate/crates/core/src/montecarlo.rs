//! Per-path random streams, worker pools, and fixed-order reductions.
//!
//! Every path `i` draws from its own ChaCha8 stream `(seed, i)`, and results
//! are collected in path order before any reduction, so summaries are
//! bit-identical for any worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub type PathRng = ChaCha8Rng;

/// RNG for path `index` of a run seeded with `seed`.
pub fn path_rng(seed: u64, index: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Evaluates `f(i)` for `i in 0..n` on `workers` threads (0 = rayon default)
/// and returns the results in index order.
pub fn run_paths<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build();
    match pool {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        Err(_) => (0..n).map(f).collect(),
    }
}

/// Neumaier-compensated sum in slice order.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub n_paths: usize,
    pub mean: f64,
    pub std_error: f64,
    pub confidence_radius: f64,
}

impl MonteCarloSummary {
    /// Summary of a sample of at least two values.
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        let n = samples.len();
        if n < 2 {
            return None;
        }
        let mean = compensated_sum(samples.iter().copied()) / n as f64;
        let ss = compensated_sum(samples.iter().map(|x| (x - mean) * (x - mean)));
        let var = ss / (n - 1) as f64;
        let std_error = (var / n as f64).sqrt();
        Some(Self { n_paths: n, mean, std_error, confidence_radius: 1.96 * std_error })
    }

    /// `(mean - target) / std_error`, infinite when the error is zero and the
    /// mean differs.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = self.mean - target;
        if self.std_error > 0.0 {
            d / self.std_error
        } else if d == 0.0 {
            0.0
        } else {
            d.signum() * f64::INFINITY
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_of_worker_count() {
        let draw = |i: usize| path_rng(42, i as u64).random::<u64>();
        let a = run_paths(64, 1, draw);
        let b = run_paths(64, 4, draw);
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn summary_of_known_sample() {
        let s = MonteCarloSummary::from_samples(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((s.std_error - sd / 2.0).abs() < 1e-15);
        assert!((s.confidence_radius - 1.96 * s.std_error).abs() < 1e-15);
        assert!(MonteCarloSummary::from_samples(&[1.0]).is_none());
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }
}
