//! Shared test fixtures: deterministic synthetic datasets in svmlight text.
#![allow(dead_code)] // each test binary uses a different subset

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Standard normal via Box-Muller.
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Two Gaussian blobs in `dim` dimensions with class centers at ±`mu` per
/// coordinate and unit-ish spread `sigma`. Small `mu` gives heavy class
/// overlap (a persistent stream of margin violations), large `mu` a cleanly
/// separable problem.
pub fn blobs_svmlight(n: usize, dim: usize, mu: f64, sigma: f64, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for _ in 0..n {
        let y: i8 = if rng.random_bool(0.5) { 1 } else { -1 };
        let _ = write!(out, "{y}");
        for d in 0..dim {
            let v = y as f64 * mu + sigma * gauss(&mut rng);
            let _ = write!(out, " {}:{:.6}", d + 1, v);
        }
        out.push('\n');
    }
    out
}

/// Cleanly separable 2-D problem (blob centers at ±2, spread 0.3).
pub fn separable_2d(n: usize, seed: u64) -> String {
    blobs_svmlight(n, 2, 2.0, 0.3, seed)
}

/// Benchmark surrogate with heavily overlapping classes: the margin stays
/// violated for a large fraction of presentations, so training is
/// maintenance-dominated the way a small budget on a large real dataset is.
pub fn overlapping_benchmark(n: usize, seed: u64) -> String {
    blobs_svmlight(n, 12, 0.12, 1.0, seed)
}

/// A kernel bandwidth matched to the squared point distances of
/// [`overlapping_benchmark`] (`E‖a − b‖² ≈ 2·dim` for unit spread).
pub const BENCHMARK_GAMMA: f64 = 0.04;
