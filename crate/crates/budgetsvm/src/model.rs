//! The budgeted kernel expansion `w = Σ αⱼ φ(xⱼ)` with prediction, margin,
//! and exact weight-norm diagnostics.
//!
//! Per-step multiplicative shrinking is implemented lazily through one
//! global `scale` factor, so a shrink costs O(1) instead of O(B). The
//! effective coefficient of support vector `j` is always `scale · αⱼ`.
//! The bias term is fixed to 0 for the whole training procedure; the SGD
//! update rule never changes it.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use thiserror::Error;

use crate::data::Dataset;
use crate::kernel::{gaussian_kernel, SparseVector};

/// Folding threshold for the lazy scale factor; below this the scale is
/// multiplied into every stored alpha and reset to 1.
const SCALE_UNDERFLOW: f64 = 1e-100;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("support vector coefficient must be nonzero")]
    ZeroCoefficient,
    #[error("malformed model file at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A center with its stored (pre-scale) coefficient.
#[derive(Debug, Clone)]
pub struct SupportVector {
    pub center: SparseVector,
    pub alpha: f64,
}

/// Kernel expansion capped at `budget + 1` support vectors; the `+ 1` slot
/// exists only transiently between an insertion and budget maintenance.
#[derive(Debug, Clone)]
pub struct BudgetedModel {
    svs: Vec<SupportVector>,
    budget: usize,
    gamma: f64,
    scale: f64,
    bias: f64,
}

impl BudgetedModel {
    pub fn new(budget: usize, gamma: f64) -> Self {
        assert!(gamma > 0.0, "kernel bandwidth must be positive");
        BudgetedModel {
            svs: Vec::with_capacity(budget + 1),
            budget,
            gamma,
            scale: 1.0,
            bias: 0.0,
        }
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn num_svs(&self) -> usize {
        self.svs.len()
    }

    pub fn svs(&self) -> &[SupportVector] {
        &self.svs
    }

    /// `scale · αⱼ`, the coefficient actually multiplying `k(xⱼ, ·)`.
    pub fn effective_alpha(&self, j: usize) -> f64 {
        self.scale * self.svs[j].alpha
    }

    fn check_budget(&self) {
        debug_assert!(
            self.svs.len() <= self.budget + 1,
            "budget overflow: {} svs with B = {}",
            self.svs.len(),
            self.budget
        );
    }

    /// `scale · Σⱼ αⱼ k(xⱼ, x) + b`. Θ(|svs|) kernel evaluations.
    pub fn margin(&self, x: &SparseVector) -> f64 {
        let sum: f64 = self
            .svs
            .iter()
            .map(|sv| sv.alpha * gaussian_kernel(&sv.center, x, self.gamma))
            .sum();
        self.scale * sum + self.bias
    }

    /// Sign of the margin; an exact 0 predicts +1.
    pub fn predict(&self, x: &SparseVector) -> i8 {
        if self.margin(x) >= 0.0 {
            1
        } else {
            -1
        }
    }

    /// Appends a support vector carrying the given effective coefficient.
    pub fn add_sv(&mut self, x: SparseVector, alpha_effective: f64) -> Result<(), ModelError> {
        if alpha_effective == 0.0 {
            return Err(ModelError::ZeroCoefficient);
        }
        self.svs.push(SupportVector {
            center: x,
            alpha: alpha_effective / self.scale,
        });
        self.check_budget();
        Ok(())
    }

    /// Multiplies every effective coefficient by `factor` in O(1).
    pub fn rescale(&mut self, factor: f64) {
        assert!(
            factor > 0.0 && factor <= 1.0,
            "rescale factor must be in (0, 1]"
        );
        self.scale *= factor;
        if self.scale < SCALE_UNDERFLOW {
            self.fold_scale();
        }
    }

    /// Zeroes the weight vector. Equivalent to rescaling by factor 0, which
    /// the SGD loop hits at t = 1 where `1 − λη₁ = 0`.
    pub fn clear(&mut self) {
        self.svs.clear();
        self.scale = 1.0;
    }

    fn fold_scale(&mut self) {
        for sv in &mut self.svs {
            sv.alpha *= self.scale;
        }
        self.scale = 1.0;
        self.svs.retain(|sv| sv.alpha != 0.0);
    }

    /// Removes the support vectors at `remove` (distinct indices) and
    /// optionally inserts one replacement with the given effective
    /// coefficient. A replacement whose coefficient is exactly 0 is dropped.
    pub(crate) fn splice(&mut self, remove: &[usize], insert: Option<(SparseVector, f64)>) -> bool {
        let mut order: Vec<usize> = remove.to_vec();
        order.sort_unstable();
        order.dedup();
        debug_assert_eq!(order.len(), remove.len(), "duplicate removal index");
        // descending order keeps the surviving SVs in their original order
        for &idx in order.iter().rev() {
            self.svs.remove(idx);
        }
        let mut inserted = false;
        if let Some((center, alpha_eff)) = insert {
            if alpha_eff != 0.0 {
                self.svs.push(SupportVector {
                    center,
                    alpha: alpha_eff / self.scale,
                });
                inserted = true;
            }
        }
        self.check_budget();
        inserted
    }

    /// `‖w‖² = scale² · Σᵢⱼ αᵢαⱼ k(xᵢ, xⱼ)` via the full Gram double sum.
    /// O(|svs|²); diagnostics only.
    pub fn weight_norm_sq(&self) -> f64 {
        let n = self.svs.len();
        let mut sum = 0.0;
        for i in 0..n {
            sum += self.svs[i].alpha * self.svs[i].alpha;
            for j in (i + 1)..n {
                sum += 2.0
                    * self.svs[i].alpha
                    * self.svs[j].alpha
                    * gaussian_kernel(&self.svs[i].center, &self.svs[j].center, self.gamma);
            }
        }
        self.scale * self.scale * sum
    }

    /// `λ/2 ‖w‖² + (1/n) Σ max{0, 1 − yᵢ·margin(xᵢ)}`. Diagnostics only.
    pub fn primal_objective(&self, dataset: &Dataset, lambda: f64) -> f64 {
        let loss: f64 = (0..dataset.len())
            .map(|i| {
                let m = self.margin(dataset.point(i));
                (1.0 - dataset.label(i) as f64 * m).max(0.0)
            })
            .sum();
        lambda / 2.0 * self.weight_norm_sq() + loss / dataset.len() as f64
    }

    /// Writes the model in its text format: a header line
    /// `budgetsvm v1 gamma=<g> bias=<b> B=<B>`, then one line per support
    /// vector, `<effective_alpha> <idx>:<val> ...`, all reals with 17
    /// significant digits.
    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(
            w,
            "budgetsvm v1 gamma={} bias={} B={}",
            fmt_f64(self.gamma),
            fmt_f64(self.bias),
            self.budget
        )?;
        let mut line = String::new();
        for sv in &self.svs {
            line.clear();
            line.push_str(&fmt_f64(self.scale * sv.alpha));
            for &(i, v) in sv.center.entries() {
                let _ = write!(line, " {}:{}", i, fmt_f64(v));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut f = File::create(path)?;
        self.write_to(&mut f)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self, ModelError> {
        let malformed = |line: usize, reason: &str| ModelError::Malformed {
            line,
            reason: reason.to_string(),
        };
        let mut lines = reader.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| malformed(1, "missing header"))?;
        let header = header?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("budgetsvm") || parts.next() != Some("v1") {
            return Err(malformed(1, "expected 'budgetsvm v1' header"));
        }
        let mut gamma = None;
        let mut bias = None;
        let mut budget = None;
        for field in parts {
            let (key, val) = field
                .split_once('=')
                .ok_or_else(|| malformed(1, "malformed header field"))?;
            match key {
                "gamma" => gamma = Some(val.parse::<f64>().map_err(|_| malformed(1, "bad gamma"))?),
                "bias" => bias = Some(val.parse::<f64>().map_err(|_| malformed(1, "bad bias"))?),
                "B" => budget = Some(val.parse::<usize>().map_err(|_| malformed(1, "bad B"))?),
                _ => return Err(malformed(1, "unknown header field")),
            }
        }
        let gamma = gamma.ok_or_else(|| malformed(1, "header missing gamma"))?;
        let budget = budget.ok_or_else(|| malformed(1, "header missing B"))?;
        if !gamma.is_finite() || gamma <= 0.0 {
            return Err(malformed(1, "gamma must be positive"));
        }
        let mut model = BudgetedModel::new(budget, gamma);
        model.bias = bias.unwrap_or(0.0);

        for (lineno, line) in lines {
            let lineno = lineno + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let alpha: f64 = tokens
                .next()
                .unwrap()
                .parse()
                .map_err(|_| malformed(lineno, "bad coefficient"))?;
            if alpha == 0.0 {
                return Err(malformed(lineno, "zero coefficient"));
            }
            let mut pairs = Vec::new();
            let mut last = 0u32;
            for tok in tokens {
                let (i_s, v_s) = tok
                    .split_once(':')
                    .ok_or_else(|| malformed(lineno, "malformed entry"))?;
                let i: u32 = i_s.parse().map_err(|_| malformed(lineno, "bad index"))?;
                let v: f64 = v_s.parse().map_err(|_| malformed(lineno, "bad value"))?;
                if i == 0 || i <= last {
                    return Err(malformed(lineno, "indices must be strictly increasing"));
                }
                last = i;
                pairs.push((i, v));
            }
            model.svs.push(SupportVector {
                center: SparseVector::from_sorted_pairs(pairs),
                alpha,
            });
        }
        if model.svs.len() > budget + 1 {
            return Err(malformed(0, "more support vectors than the budget allows"));
        }
        Ok(model)
    }
}

/// Decimal with 17 significant digits; round-trips every finite f64.
fn fmt_f64(v: f64) -> String {
    format!("{:.16e}", v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_svmlight;
    use proptest::prelude::*;

    fn sv(pairs: &[(u32, f64)]) -> SparseVector {
        SparseVector::from_sorted_pairs(pairs.to_vec())
    }

    #[test]
    fn margin_of_empty_model_is_zero() {
        let m = BudgetedModel::new(5, 1.0);
        assert_eq!(m.margin(&sv(&[(1, 1.0)])), 0.0);
    }

    #[test]
    fn margin_at_own_center() {
        let mut m = BudgetedModel::new(5, 1.0);
        m.add_sv(sv(&[(1, 1.0)]), 2.0).unwrap();
        assert_eq!(m.margin(&sv(&[(1, 1.0)])), 2.0);
    }

    #[test]
    fn symmetric_pair_cancels() {
        let mut m = BudgetedModel::new(5, 1.0);
        // both centers at squared distance 1 from x
        m.add_sv(sv(&[(1, 1.0)]), 1.0).unwrap();
        m.add_sv(sv(&[(2, 1.0)]), -1.0).unwrap();
        let x = sv(&[(1, 1.0), (2, 1.0)]);
        assert_eq!(crate::kernel::squared_distance(&sv(&[(1, 1.0)]), &x), 1.0);
        assert!(m.margin(&x).abs() < 1e-15);
    }

    #[test]
    fn predict_sign_and_tiebreak() {
        let mut pos = BudgetedModel::new(2, 1.0);
        pos.add_sv(sv(&[(1, 1.0)]), 0.3).unwrap();
        assert_eq!(pos.predict(&sv(&[(1, 1.0)])), 1);
        let mut neg = BudgetedModel::new(2, 1.0);
        neg.add_sv(sv(&[(1, 1.0)]), -0.3).unwrap();
        assert_eq!(neg.predict(&sv(&[(1, 1.0)])), -1);
        let empty = BudgetedModel::new(2, 1.0);
        assert_eq!(empty.predict(&sv(&[(1, 1.0)])), 1);
    }

    #[test]
    fn add_cancelling_pair_gives_zero_margin() {
        let mut m = BudgetedModel::new(5, 1.0);
        let x = sv(&[(1, 2.0)]);
        m.add_sv(x.clone(), 1.0).unwrap();
        m.add_sv(x.clone(), -1.0).unwrap();
        assert_eq!(m.margin(&x), 0.0);
    }

    #[test]
    fn add_sv_divides_by_scale() {
        let mut m = BudgetedModel::new(5, 1.0);
        m.add_sv(sv(&[(1, 1.0)]), 1.0).unwrap();
        m.rescale(0.5);
        m.add_sv(sv(&[(2, 1.0)]), 1.0).unwrap();
        assert_eq!(m.svs()[1].alpha, 2.0);
        assert!((m.effective_alpha(1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn add_sv_rejects_zero() {
        let mut m = BudgetedModel::new(5, 1.0);
        assert!(matches!(
            m.add_sv(sv(&[(1, 1.0)]), 0.0),
            Err(ModelError::ZeroCoefficient)
        ));
    }

    #[test]
    fn rescale_compounds_and_preserves_sign() {
        let mut m = BudgetedModel::new(5, 1.0);
        let x = sv(&[(1, 1.0)]);
        m.add_sv(x.clone(), 2.0).unwrap();
        let before = m.margin(&x);
        m.rescale(1.0);
        assert_eq!(m.margin(&x), before);
        m.rescale(0.9);
        m.rescale(0.9);
        assert!((m.margin(&x) - before * 0.81).abs() < 1e-15);
        assert_eq!(m.predict(&x), 1);
    }

    #[test]
    fn rescale_underflow_folds_into_alphas() {
        let mut m = BudgetedModel::new(5, 1.0);
        let x = sv(&[(1, 1.0)]);
        m.add_sv(x.clone(), 1.0).unwrap();
        for _ in 0..2000 {
            m.rescale(0.9);
        }
        // 0.9^2000 ≈ 5e-92, then the next folds pass underneath 1e-100
        for _ in 0..200 {
            m.rescale(0.9);
        }
        assert!(m.margin(&x).abs() < 1e-90);
        assert!(m.num_svs() <= 1);
    }

    #[test]
    fn weight_norm_sq_cases() {
        let empty = BudgetedModel::new(5, 1.0);
        assert_eq!(empty.weight_norm_sq(), 0.0);

        let mut one = BudgetedModel::new(5, 1.0);
        one.add_sv(sv(&[(1, 1.0)]), 3.0).unwrap();
        assert!((one.weight_norm_sq() - 9.0).abs() < 1e-12);

        let mut twin = BudgetedModel::new(5, 1.0);
        twin.add_sv(sv(&[(1, 1.0)]), 1.0).unwrap();
        twin.add_sv(sv(&[(1, 1.0)]), 1.0).unwrap();
        assert!((twin.weight_norm_sq() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn primal_objective_cases() {
        let d = parse_svmlight("+1 1:1\n-1 2:1\n".as_bytes()).unwrap();
        let empty = BudgetedModel::new(5, 1.0);
        assert!((empty.primal_objective(&d, 0.5) - 1.0).abs() < 1e-12);

        // single point, margin 0.25 on a +1 label → loss 0.75
        let d1 = parse_svmlight("+1 1:1\n".as_bytes()).unwrap();
        let mut m = BudgetedModel::new(5, 1.0);
        m.add_sv(sv(&[(1, 1.0)]), 0.25).unwrap();
        let obj = m.primal_objective(&d1, 2.0);
        assert!((obj - (1.0 * 0.0625 + 0.75)).abs() < 1e-12);
    }

    #[test]
    fn serialization_roundtrips_bit_exact() {
        let mut m = BudgetedModel::new(7, 0.031_25);
        m.add_sv(sv(&[(1, 0.1), (5, -2.75)]), 0.637).unwrap();
        m.add_sv(sv(&[(2, 1.0 / 3.0)]), -1.25e-7).unwrap();
        m.rescale(0.918273645);

        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let loaded = BudgetedModel::read_from(&buf[..]).unwrap();
        assert_eq!(loaded.budget(), 7);
        assert_eq!(loaded.gamma(), 0.031_25);
        for j in 0..m.num_svs() {
            assert_eq!(loaded.effective_alpha(j), m.effective_alpha(j));
            assert_eq!(loaded.svs()[j].center, m.svs()[j].center);
        }
        let mut buf2 = Vec::new();
        loaded.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn load_rejects_garbage() {
        assert!(BudgetedModel::read_from("not a model\n".as_bytes()).is_err());
        assert!(
            BudgetedModel::read_from("budgetsvm v1 gamma=1 bias=0 B=2\nx 1:1\n".as_bytes())
                .is_err()
        );
        assert!(BudgetedModel::read_from("budgetsvm v1 bias=0 B=2\n".as_bytes()).is_err());
    }

    proptest! {
        // Lazy scaling must agree with a model that applies every shrink
        // eagerly to each stored coefficient.
        #[test]
        fn lazy_scaling_matches_eager(
            ops in proptest::collection::vec(
                prop_oneof![
                    (0.05f64..0.999).prop_map(|f| (0u8, f)),
                    (-3.0f64..3.0).prop_map(|a| (1u8, a)),
                ],
                1..40),
            query in proptest::collection::btree_map(1u32..8, -2.0f64..2.0, 1..4)
        ) {
            let query =
                SparseVector::from_sorted_pairs(query.into_iter().collect());
            let mut lazy = BudgetedModel::new(64, 0.5);
            let mut eager = BudgetedModel::new(64, 0.5);
            let mut k = 1u32;
            for (kind, v) in ops {
                match kind {
                    0 => {
                        lazy.rescale(v);
                        for sv in &mut eager.svs {
                            sv.alpha *= v;
                        }
                    }
                    _ => {
                        if v != 0.0 {
                            let center = sv(&[(k % 8 + 1, v)]);
                            lazy.add_sv(center.clone(), v).unwrap();
                            eager.svs.push(SupportVector { center, alpha: v });
                            k += 1;
                        }
                    }
                }
            }
            let (a, b) = (lazy.margin(&query), eager.margin(&query));
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
    }
}
