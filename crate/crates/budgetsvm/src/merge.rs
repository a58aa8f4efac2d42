//! Budget maintenance: removal, binary merging with golden section search,
//! and multi-merge of M support vectors by cascaded binary merges or by
//! direct gradient descent on the weight degradation.
//!
//! Merging two support vectors `(xᵢ, αᵢ)` and `(xⱼ, αⱼ)` replaces them with
//! one term `α_z φ(z)`. For the Gaussian kernel the optimal `z` lies on the
//! line `z = h·xᵢ + (1 − h)·xⱼ`; with `c = γ‖xᵢ − xⱼ‖²` the optimal
//! coefficient for fixed `h` is
//!
//! ```text
//! α_z = f(h) = αᵢ·exp(−c(1 − h)²) + αⱼ·exp(−c·h²)
//! ```
//!
//! and the squared weight degradation is
//! `‖Δ‖² = αᵢ² + αⱼ² + 2αᵢαⱼ·exp(−c) − f(h)²`, so minimizing `‖Δ‖²` is
//! maximizing `f(h)²`. The degradation is evaluated through `expm1` to stay
//! exact when the merge is nearly lossless.

use thiserror::Error;

use crate::kernel::{line_point, squared_distance, weighted_mean, DegenerateWeights, SparseVector};
use crate::model::BudgetedModel;

/// Inverse golden ratio, (√5 − 1)/2.
const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Smallest backtracking step before the line search gives up.
const MIN_GD_STEP: f64 = 1e-20;

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("budget maintenance needs {need} support vectors, model has {have}")]
    InsufficientSvs { have: usize, need: usize },
}

/// Which budget maintenance procedure runs when an insertion overflows B.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Delete the support vector with the smallest |coefficient|.
    Removal,
    /// Classic binary merge (fixed M = 2).
    Merge,
    /// Multi-merge as a cascade of M − 1 binary merges.
    MmBsgd,
    /// Multi-merge by gradient descent on the weight degradation.
    MmGd,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Removal => "removal",
            Strategy::Merge => "merge",
            Strategy::MmBsgd => "mm-bsgd",
            Strategy::MmGd => "mm-gd",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "removal" => Ok(Strategy::Removal),
            "merge" => Ok(Strategy::Merge),
            "mm-bsgd" => Ok(Strategy::MmBsgd),
            "mm-gd" => Ok(Strategy::MmGd),
            _ => Err(format!(
                "unknown strategy '{s}' (expected removal, merge, mm-bsgd or mm-gd)"
            )),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct GoldenSectionParams {
    /// Stop once the bracket width is at most this.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for GoldenSectionParams {
    fn default() -> Self {
        GoldenSectionParams {
            tol: 1e-3,
            max_iters: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct GradientDescentParams {
    /// Relative-improvement stopping tolerance ε.
    pub epsilon: f64,
    pub max_iters: usize,
}

impl Default for GradientDescentParams {
    fn default() -> Self {
        GradientDescentParams {
            epsilon: 1e-8,
            max_iters: 100,
        }
    }
}

/// Everything budget maintenance needs from the training configuration.
#[derive(Debug, Clone, Copy)]
pub struct MaintenanceParams {
    pub strategy: Strategy,
    pub mergees: usize,
    pub golden: GoldenSectionParams,
    pub gd: GradientDescentParams,
    /// Run the cascade first and refine its output by gradient descent.
    pub gd_refine: bool,
}

/// One ranked merge partner for a fixed first point.
#[derive(Debug, Clone, Copy)]
pub struct MergeCandidate {
    pub partner: usize,
    pub h_opt: f64,
    /// Effective coefficient of the merged vector, `f(h_opt)`.
    pub alpha_z: f64,
    pub degradation_sq: f64,
}

/// `f(h) = αᵢ·exp(−γ(1−h)²d²) + αⱼ·exp(−γh²d²)`, the optimal merged
/// coefficient for the line point at parameter `h`.
pub fn objective_along_line(alpha_i: f64, alpha_j: f64, d_sq: f64, gamma: f64, h: f64) -> f64 {
    let c = gamma * d_sq;
    alpha_i * (-c * (1.0 - h) * (1.0 - h)).exp() + alpha_j * (-c * h * h).exp()
}

/// `‖Δ‖²` for the binary merge at line parameter `h`, in a form that avoids
/// the cancellation of `S − f(h)²` when the degradation is tiny.
fn line_degradation_sq(alpha_i: f64, alpha_j: f64, c: f64, h: f64) -> f64 {
    let t_i = -alpha_i * alpha_i * f64::exp_m1(-2.0 * c * (1.0 - h) * (1.0 - h));
    let t_j = -alpha_j * alpha_j * f64::exp_m1(-2.0 * c * h * h);
    let cross = -2.0 * alpha_i * alpha_j * (-c).exp() * f64::exp_m1(2.0 * c * h * (1.0 - h));
    (t_i + t_j + cross).max(0.0)
}

/// Maximizes `f(h)²` by golden section search and returns
/// `(h_opt, α_z, ‖Δ‖²)`.
///
/// Same-sign coefficient pairs are bracketed on [0, 1], opposite signs on
/// [−1, 2]. Because `f(h)²` can be bimodal for large `γd²`, the endpoints
/// h ∈ {0, 1} are always evaluated as well and the overall best point wins;
/// a merge can therefore degenerate to keeping one of the two centers.
pub fn golden_section_merge(
    alpha_i: f64,
    alpha_j: f64,
    d_sq: f64,
    gamma: f64,
    gs: &GoldenSectionParams,
) -> (f64, f64, f64) {
    if d_sq == 0.0 {
        // coincident centers merge exactly; h is arbitrary
        return (0.5, alpha_i + alpha_j, 0.0);
    }
    let c = gamma * d_sq;
    let score = |h: f64| {
        let f = objective_along_line(alpha_i, alpha_j, d_sq, gamma, h);
        f * f
    };
    let (mut a, mut b) = if alpha_i * alpha_j > 0.0 {
        (0.0, 1.0)
    } else {
        (-1.0, 2.0)
    };

    let mut best_h = a;
    let mut best_s = f64::NEG_INFINITY;
    let consider = |h: f64, s: f64, best_h: &mut f64, best_s: &mut f64| {
        if s > *best_s {
            *best_s = s;
            *best_h = h;
        }
    };

    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut s1 = score(x1);
    let mut s2 = score(x2);
    consider(x1, s1, &mut best_h, &mut best_s);
    consider(x2, s2, &mut best_h, &mut best_s);
    let mut iters = 0;
    while b - a > gs.tol && iters < gs.max_iters {
        if s1 > s2 {
            b = x2;
            x2 = x1;
            s2 = s1;
            x1 = b - INV_PHI * (b - a);
            s1 = score(x1);
            consider(x1, s1, &mut best_h, &mut best_s);
        } else {
            a = x1;
            x1 = x2;
            s1 = s2;
            x2 = a + INV_PHI * (b - a);
            s2 = score(x2);
            consider(x2, s2, &mut best_h, &mut best_s);
        }
        iters += 1;
    }
    let mid = 0.5 * (a + b);
    consider(mid, score(mid), &mut best_h, &mut best_s);
    // bimodality guard: the endpoints keep one of the two centers and must
    // never be beaten by a worse interior h
    consider(0.0, score(0.0), &mut best_h, &mut best_s);
    consider(1.0, score(1.0), &mut best_h, &mut best_s);

    let alpha_z = objective_along_line(alpha_i, alpha_j, d_sq, gamma, best_h);
    let deg = line_degradation_sq(alpha_i, alpha_j, c, best_h);
    (best_h, alpha_z, deg)
}

/// Index of the support vector with minimal |α| (the global scale cancels),
/// ties broken by the smallest index.
pub fn select_first(model: &BudgetedModel) -> usize {
    assert!(model.num_svs() >= 1);
    let mut best = 0;
    for j in 1..model.num_svs() {
        if model.svs()[j].alpha.abs() < model.svs()[best].alpha.abs() {
            best = j;
        }
    }
    best
}

/// Solves the binary merge problem of `i` against every other support
/// vector and returns the `m − 1` partners with the smallest pairwise
/// weight degradation, ascending, ties by smaller index.
pub fn rank_partners(
    model: &BudgetedModel,
    i: usize,
    m: usize,
    gs: &GoldenSectionParams,
) -> Vec<MergeCandidate> {
    debug_assert!(model.num_svs() >= m);
    let alpha_i = model.effective_alpha(i);
    let xi = &model.svs()[i].center;
    let mut candidates: Vec<MergeCandidate> = (0..model.num_svs())
        .filter(|&j| j != i)
        .map(|j| {
            let d_sq = squared_distance(xi, &model.svs()[j].center);
            let (h_opt, alpha_z, degradation_sq) =
                golden_section_merge(alpha_i, model.effective_alpha(j), d_sq, model.gamma(), gs);
            MergeCandidate {
                partner: j,
                h_opt,
                alpha_z,
                degradation_sq,
            }
        })
        .collect();
    candidates.sort_by(|a, b| {
        a.degradation_sq
            .total_cmp(&b.degradation_sq)
            .then(a.partner.cmp(&b.partner))
    });
    candidates.truncate(m - 1);
    candidates
}

/// Cascaded multi-merge: merges `i` with the best-ranked candidate, then
/// folds the remaining candidates into the running `(z, α_z)` in ascending
/// degradation order. Returns the final center and effective coefficient.
pub fn mm_bsgd_merge(
    model: &BudgetedModel,
    i: usize,
    candidates: &[MergeCandidate],
    gs: &GoldenSectionParams,
) -> (SparseVector, f64) {
    assert!(!candidates.is_empty());
    let first = &candidates[0];
    let mut z = line_point(
        &model.svs()[i].center,
        &model.svs()[first.partner].center,
        first.h_opt,
    );
    let mut alpha_z = first.alpha_z;
    for cand in &candidates[1..] {
        let xj = &model.svs()[cand.partner].center;
        let d_sq = squared_distance(&z, xj);
        let (h, az, _) = golden_section_merge(
            alpha_z,
            model.effective_alpha(cand.partner),
            d_sq,
            model.gamma(),
            gs,
        );
        z = line_point(&z, xj, h);
        alpha_z = az;
    }
    (z, alpha_z)
}

/// `‖Σ αᵢφ(xᵢ) − α_z φ(z)‖²` via the full Gram expansion:
/// `Σᵢⱼ αᵢαⱼ k(xᵢ,xⱼ) − 2α_z Σᵢ αᵢ k(xᵢ,z) + α_z²`.
pub fn mm_gd_objective(
    points: &[(&SparseVector, f64)],
    z: &SparseVector,
    alpha_z: f64,
    gamma: f64,
) -> f64 {
    let mut gram = 0.0;
    for (a, &(xa, aa)) in points.iter().enumerate() {
        gram += aa * aa;
        for &(xb, ab) in &points[a + 1..] {
            gram += 2.0 * aa * ab * crate::kernel::gaussian_kernel(xa, xb, gamma);
        }
    }
    let lin: f64 = points
        .iter()
        .map(|&(xa, aa)| aa * crate::kernel::gaussian_kernel(xa, z, gamma))
        .sum();
    gram - 2.0 * alpha_z * lin + alpha_z * alpha_z
}

/// Analytic gradient of [`mm_gd_objective`] in `z` at fixed `α_z`:
/// `∇_z f = −4γ·α_z·Σᵢ αᵢ·k(xᵢ,z)·(xᵢ − z)`.
///
/// Returned as (index, value) pairs over the index union of the points
/// and `z`; zero components are kept so the coordinates are explicit.
pub fn mm_gd_gradient(
    points: &[(&SparseVector, f64)],
    z: &SparseVector,
    alpha_z: f64,
    gamma: f64,
) -> Vec<(u32, f64)> {
    let ws = DenseWorkspace::new(points, Some(z), gamma);
    let zd = ws.densify(z);
    let mut grad = vec![0.0; ws.indices.len()];
    ws.gradient(&zd, alpha_z, &mut grad);
    ws.indices.iter().copied().zip(grad).collect()
}

/// Result of a gradient-descent multi-merge.
#[derive(Debug, Clone)]
pub struct MmGdOutcome {
    pub center: SparseVector,
    pub alpha_z: f64,
    /// Objective value after initialization and after every accepted step;
    /// non-increasing by construction of the backtracking line search.
    pub f_trace: Vec<f64>,
}

/// Dense view of M support vectors over the sorted union of their feature
/// indices; caches the Gram term `Σᵢⱼ αᵢαⱼ k(xᵢ,xⱼ)` once per maintenance
/// call.
struct DenseWorkspace {
    indices: Vec<u32>,
    xs: Vec<Vec<f64>>,
    alphas: Vec<f64>,
    gamma: f64,
    gram_term: f64,
}

impl DenseWorkspace {
    fn new(points: &[(&SparseVector, f64)], extra: Option<&SparseVector>, gamma: f64) -> Self {
        let mut indices: Vec<u32> = points
            .iter()
            .flat_map(|(p, _)| p.entries().iter().map(|&(i, _)| i))
            .chain(
                extra
                    .into_iter()
                    .flat_map(|p| p.entries().iter().map(|&(i, _)| i)),
            )
            .collect();
        indices.sort_unstable();
        indices.dedup();

        let mut ws = DenseWorkspace {
            xs: Vec::with_capacity(points.len()),
            alphas: points.iter().map(|&(_, a)| a).collect(),
            indices,
            gamma,
            gram_term: 0.0,
        };
        for &(p, _) in points {
            let dense = ws.densify(p);
            ws.xs.push(dense);
        }
        let m = ws.xs.len();
        for a in 0..m {
            ws.gram_term += ws.alphas[a] * ws.alphas[a];
            for b in (a + 1)..m {
                let k = (-gamma * dist_sq(&ws.xs[a], &ws.xs[b])).exp();
                ws.gram_term += 2.0 * ws.alphas[a] * ws.alphas[b] * k;
            }
        }
        ws
    }

    fn densify(&self, p: &SparseVector) -> Vec<f64> {
        let mut dense = vec![0.0; self.indices.len()];
        for &(i, v) in p.entries() {
            let pos = self.indices.binary_search(&i).expect("index outside union");
            dense[pos] = v;
        }
        dense
    }

    fn sparsify(&self, dense: &[f64]) -> SparseVector {
        SparseVector::from_sorted_pairs(
            self.indices
                .iter()
                .copied()
                .zip(dense.iter().copied())
                .filter(|&(_, v)| v != 0.0)
                .collect(),
        )
    }

    /// `Σᵢ αᵢ k(xᵢ, z)`, the closed-form optimal α_z for this `z`.
    fn linear_term(&self, z: &[f64]) -> f64 {
        self.xs
            .iter()
            .zip(&self.alphas)
            .map(|(x, &a)| a * (-self.gamma * dist_sq(x, z)).exp())
            .sum()
    }

    fn gradient(&self, z: &[f64], alpha_z: f64, out: &mut [f64]) {
        out.fill(0.0);
        for (x, &a) in self.xs.iter().zip(&self.alphas) {
            let k = (-self.gamma * dist_sq(x, z)).exp();
            let w = a * k;
            for (o, (&xv, &zv)) in out.iter_mut().zip(x.iter().zip(z)) {
                *o += w * (xv - zv);
            }
        }
        let s = -4.0 * self.gamma * alpha_z;
        for o in out.iter_mut() {
            *o *= s;
        }
    }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Multi-merge by gradient descent: starts from the coefficient-weighted
/// mean `z₀ = Σ αᵢxᵢ / Σ αᵢ`, then alternates a backtracking gradient step
/// in `z` with the closed-form re-optimization `α_z = Σ αᵢ k(xᵢ, z)` until
/// the relative improvement falls below ε or the iteration cap is hit.
///
/// Fails with [`DegenerateWeights`] when `Σ αᵢ` is too close to zero to
/// form the mean; the caller falls back to the cascade.
pub fn mm_gd_merge(
    points: &[(&SparseVector, f64)],
    gamma: f64,
    gd: &GradientDescentParams,
) -> Result<MmGdOutcome, DegenerateWeights> {
    let centers: Vec<&SparseVector> = points.iter().map(|&(p, _)| p).collect();
    let alphas: Vec<f64> = points.iter().map(|&(_, a)| a).collect();
    let z0 = weighted_mean(&centers, &alphas)?;
    Ok(mm_gd_merge_from(points, &z0, gamma, gd))
}

/// Gradient-descent multi-merge from an explicit starting center (used by
/// the refine mode, which seeds with the cascade output).
pub fn mm_gd_merge_from(
    points: &[(&SparseVector, f64)],
    z0: &SparseVector,
    gamma: f64,
    gd: &GradientDescentParams,
) -> MmGdOutcome {
    let ws = DenseWorkspace::new(points, Some(z0), gamma);
    let mut z = ws.densify(z0);
    let mut lin = ws.linear_term(&z);
    let mut f_cur = ws.gram_term - lin * lin;
    let mut trace = Vec::with_capacity(gd.max_iters + 1);
    trace.push(f_cur);

    let mut grad = vec![0.0; z.len()];
    let mut z_try = vec![0.0; z.len()];
    for _ in 0..gd.max_iters {
        ws.gradient(&z, lin, &mut grad);
        if grad.iter().all(|&g| g == 0.0) {
            break;
        }
        // backtracking line search: halve from η = 1 until f decreases
        let mut eta = 1.0;
        let mut accepted = None;
        while eta >= MIN_GD_STEP {
            for ((t, &zv), &g) in z_try.iter_mut().zip(&z).zip(&grad) {
                *t = zv - eta * g;
            }
            let lin_try = ws.linear_term(&z_try);
            let f_try = ws.gram_term - lin_try * lin_try;
            if f_try < f_cur {
                accepted = Some((lin_try, f_try));
                break;
            }
            eta *= 0.5;
        }
        let Some((lin_new, f_new)) = accepted else {
            break; // no descent direction left at any step size
        };
        std::mem::swap(&mut z, &mut z_try);
        let f_prev = f_cur;
        lin = lin_new;
        f_cur = f_new;
        trace.push(f_cur);
        if f_prev - f_cur <= gd.epsilon * f_prev.abs().max(1.0) {
            break;
        }
    }
    // the backtracking guarantee, checked per event in every build
    assert!(
        trace.windows(2).all(|w| w[1] <= w[0]),
        "gradient descent objective increased"
    );
    assert!(trace.last().unwrap() <= trace.first().unwrap());

    MmGdOutcome {
        center: ws.sparsify(&z),
        alpha_z: lin,
        f_trace: trace,
    }
}

/// Deletes the support vector with the smallest |coefficient| and returns
/// the incurred `‖Δ‖²`, which is exactly its squared effective coefficient.
pub fn remove_smallest(model: &mut BudgetedModel) -> f64 {
    let i = select_first(model);
    let alpha = model.effective_alpha(i);
    model.splice(&[i], None);
    alpha * alpha
}

/// Runs the configured maintenance strategy on a model that currently holds
/// B + 1 support vectors and returns the realized `‖Δ‖²`, computed through
/// the Gram expansion over the removed points and the inserted center.
///
/// Merge strategies reduce the count to `B + 1 − (M − 1)`, removal to `B`.
pub fn budget_maintain(
    model: &mut BudgetedModel,
    params: &MaintenanceParams,
) -> Result<f64, MergeError> {
    let n = model.num_svs();
    debug_assert_eq!(
        n,
        model.budget() + 1,
        "maintenance must run exactly when the budget is exceeded"
    );
    if params.strategy == Strategy::Removal {
        return Ok(remove_smallest(model));
    }

    let m = match params.strategy {
        Strategy::Merge => 2,
        _ => params.mergees,
    };
    if n < m {
        return Err(MergeError::InsufficientSvs { have: n, need: m });
    }

    let i = select_first(model);
    let (z, alpha_z, removed, gd_trace) = match params.strategy {
        Strategy::Merge => {
            // classic BSGD: one exhaustive argmin scan, one binary merge
            let alpha_i = model.effective_alpha(i);
            let xi = &model.svs()[i].center;
            let mut best: Option<MergeCandidate> = None;
            for j in (0..n).filter(|&j| j != i) {
                let d_sq = squared_distance(xi, &model.svs()[j].center);
                let (h_opt, alpha_z, degradation_sq) = golden_section_merge(
                    alpha_i,
                    model.effective_alpha(j),
                    d_sq,
                    model.gamma(),
                    &params.golden,
                );
                if best.is_none_or(|b| degradation_sq < b.degradation_sq) {
                    best = Some(MergeCandidate {
                        partner: j,
                        h_opt,
                        alpha_z,
                        degradation_sq,
                    });
                }
            }
            let cand = best.expect("n >= 2");
            let z = line_point(xi, &model.svs()[cand.partner].center, cand.h_opt);
            (z, cand.alpha_z, vec![i, cand.partner], None)
        }
        Strategy::MmBsgd => {
            let candidates = rank_partners(model, i, m, &params.golden);
            let (z, az) = mm_bsgd_merge(model, i, &candidates, &params.golden);
            let mut removed = vec![i];
            removed.extend(candidates.iter().map(|c| c.partner));
            (z, az, removed, None)
        }
        Strategy::MmGd => {
            let candidates = rank_partners(model, i, m, &params.golden);
            let mut removed = vec![i];
            removed.extend(candidates.iter().map(|c| c.partner));
            let removed_points: Vec<(&SparseVector, f64)> = removed
                .iter()
                .map(|&j| (&model.svs()[j].center, model.effective_alpha(j)))
                .collect();
            if params.gd_refine {
                let (z0, _) = mm_bsgd_merge(model, i, &candidates, &params.golden);
                let out = mm_gd_merge_from(&removed_points, &z0, model.gamma(), &params.gd);
                (out.center, out.alpha_z, removed, Some(out.f_trace))
            } else {
                match mm_gd_merge(&removed_points, model.gamma(), &params.gd) {
                    Ok(out) => (out.center, out.alpha_z, removed, Some(out.f_trace)),
                    Err(DegenerateWeights) => {
                        // α-sum too close to zero for the mean initializer
                        let (z, az) = mm_bsgd_merge(model, i, &candidates, &params.golden);
                        (z, az, removed, None)
                    }
                }
            }
        }
        Strategy::Removal => unreachable!("handled above"),
    };

    let removed_points: Vec<(&SparseVector, f64)> = removed
        .iter()
        .map(|&j| (&model.svs()[j].center, model.effective_alpha(j)))
        .collect();
    let realized = mm_gd_objective(&removed_points, &z, alpha_z, model.gamma()).max(0.0);
    if let Some(trace) = &gd_trace {
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(trace.last().unwrap() <= trace.first().unwrap());
    }

    let inserted = model.splice(&removed, Some((z, alpha_z)));
    debug_assert_eq!(
        model.num_svs(),
        n - m + usize::from(inserted),
        "maintenance must remove exactly M − 1 support vectors"
    );
    Ok(realized)
}
