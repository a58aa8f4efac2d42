//! Sparse vectors and the Gaussian kernel.
//!
//! Training points and support-vector centers are sparse index/value lists
//! with a cached squared norm. Merged centers are general points: they live
//! on lines or in the affine hull of existing centers and are stored sparse
//! over the index union of their parents.

use thiserror::Error;

/// Sum of weights too close to zero to divide by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("degenerate weights: |sum| below tolerance")]
pub struct DegenerateWeights;

/// A sparse vector: entries sorted strictly increasing by feature index,
/// no explicit zeros, with `‖x‖²` cached at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
    norm_sq: f64,
}

impl SparseVector {
    /// Builds from index/value pairs that are already sorted by strictly
    /// increasing index. Entries with value exactly 0 are dropped.
    pub fn from_sorted_pairs(pairs: Vec<(u32, f64)>) -> Self {
        debug_assert!(
            pairs.windows(2).all(|w| w[0].0 < w[1].0),
            "indices must be strictly increasing"
        );
        let entries: Vec<(u32, f64)> = pairs.into_iter().filter(|&(_, v)| v != 0.0).collect();
        let norm_sq = entries.iter().map(|&(_, v)| v * v).sum();
        SparseVector { entries, norm_sq }
    }

    /// Builds from a dense slice; index `i` of the slice becomes feature `i + 1`.
    pub fn from_dense(values: &[f64]) -> Self {
        Self::from_sorted_pairs(
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| (i as u32 + 1, v))
                .collect(),
        )
    }

    pub fn empty() -> Self {
        SparseVector {
            entries: Vec::new(),
            norm_sq: 0.0,
        }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    pub fn max_index(&self) -> Option<u32> {
        self.entries.last().map(|&(i, _)| i)
    }
}

/// Dot product over the shared indices of two sorted sparse vectors.
pub fn dot(a: &SparseVector, b: &SparseVector) -> f64 {
    let (xs, ys) = (a.entries(), b.entries());
    let mut sum = 0.0;
    let (mut i, mut j) = (0, 0);
    while i < xs.len() && j < ys.len() {
        let (xi, yi) = (xs[i].0, ys[j].0);
        if xi == yi {
            sum += xs[i].1 * ys[j].1;
            i += 1;
            j += 1;
        } else if xi < yi {
            i += 1;
        } else {
            j += 1;
        }
    }
    sum
}

/// `‖a − b‖²` via the cached norms, clamped below at 0 to absorb
/// cancellation on near-identical vectors.
pub fn squared_distance(a: &SparseVector, b: &SparseVector) -> f64 {
    (a.norm_sq() + b.norm_sq() - 2.0 * dot(a, b)).max(0.0)
}

/// Gaussian kernel `k(a, b) = exp(−γ‖a − b‖²)`, in (0, 1].
pub fn gaussian_kernel(a: &SparseVector, b: &SparseVector, gamma: f64) -> f64 {
    debug_assert!(gamma > 0.0);
    (-gamma * squared_distance(a, b)).exp()
}

/// The point `h·a + (1 − h)·b` over the index union of `a` and `b`.
/// Entries that cancel to exactly 0 are dropped.
pub fn line_point(a: &SparseVector, b: &SparseVector, h: f64) -> SparseVector {
    combine(a, h, b, 1.0 - h)
}

/// Weighted linear combination `wa·a + wb·b` over the index union.
fn combine(a: &SparseVector, wa: f64, b: &SparseVector, wb: f64) -> SparseVector {
    let (xs, ys) = (a.entries(), b.entries());
    let mut out = Vec::with_capacity(xs.len() + ys.len());
    let (mut i, mut j) = (0, 0);
    while i < xs.len() || j < ys.len() {
        if j == ys.len() || (i < xs.len() && xs[i].0 < ys[j].0) {
            out.push((xs[i].0, wa * xs[i].1));
            i += 1;
        } else if i == xs.len() || ys[j].0 < xs[i].0 {
            out.push((ys[j].0, wb * ys[j].1));
            j += 1;
        } else {
            out.push((xs[i].0, wa * xs[i].1 + wb * ys[j].1));
            i += 1;
            j += 1;
        }
    }
    SparseVector::from_sorted_pairs(out)
}

/// `Σ wᵢ·xᵢ / Σ wᵢ` over the index union of all points.
///
/// Fails with [`DegenerateWeights`] when `|Σ wᵢ| ≤ 1e−10·max|wᵢ|`; callers
/// that hit this must fall back to a method that does not divide by the
/// weight sum.
pub fn weighted_mean(
    points: &[&SparseVector],
    weights: &[f64],
) -> Result<SparseVector, DegenerateWeights> {
    assert_eq!(points.len(), weights.len());
    let max_abs = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let sum: f64 = weights.iter().sum();
    if sum.abs() <= 1e-10 * max_abs || max_abs == 0.0 {
        return Err(DegenerateWeights);
    }
    let mut acc = SparseVector::empty();
    for (p, &w) in points.iter().zip(weights) {
        acc = combine(&acc, 1.0, p, w);
    }
    let inv = 1.0 / sum;
    Ok(SparseVector::from_sorted_pairs(
        acc.entries.into_iter().map(|(i, v)| (i, v * inv)).collect(),
    ))
}
