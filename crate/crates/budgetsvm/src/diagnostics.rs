//! Timing breakdown, degradation and gradient-error logging, and accuracy
//! evaluation.
//!
//! The gradient-error log holds `‖E_t‖ = ‖Δ_t‖/η_t` for every SGD step;
//! steps without maintenance contribute 0, so its mean is the average
//! gradient error Ē over all N iterations of the regret bound.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::model::BudgetedModel;
use crate::sgd::TrainConfig;

/// The configuration a run actually used, with λ resolved.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub config: TrainConfig,
    /// Resolved regularization parameter (λ = 1/(n·C) when C was given).
    pub lambda: f64,
    pub n_train: usize,
    /// Accuracy was computed on the training set because no test set was given.
    pub eval_on_train: bool,
}

/// Everything a training run reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub total_train_seconds: f64,
    /// Wall-clock time inside budget maintenance, partner ranking included.
    pub merge_seconds: f64,
    pub maintenance_calls: usize,
    pub sv_insertions: usize,
    /// Realized `‖Δ‖²` per maintenance event.
    pub degradation_log: Vec<f64>,
    /// `‖Δ_t‖/η_t` per SGD step (0 when the step ran no maintenance).
    pub gradient_error_log: Vec<f64>,
    /// Ē, the mean of `gradient_error_log` (0 for an empty log).
    pub avg_gradient_error: f64,
    pub test_accuracy: f64,
    pub final_sv_count: usize,
    /// Merge events whose replacement coefficient cancelled to exactly 0
    /// and was pruned instead of inserted (duplicate centers with exactly
    /// opposite coefficients). Each such event removes M instead of M − 1.
    pub pruned_merges: usize,
    pub config: ConfigEcho,
}

impl RunReport {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        total_train_seconds: f64,
        merge_seconds: f64,
        maintenance_calls: usize,
        sv_insertions: usize,
        degradation_log: Vec<f64>,
        gradient_error_log: Vec<f64>,
        test_accuracy: f64,
        final_sv_count: usize,
        pruned_merges: usize,
        config: ConfigEcho,
    ) -> Self {
        debug_assert!(merge_seconds <= total_train_seconds);
        debug_assert_eq!(degradation_log.len(), maintenance_calls);
        let avg_gradient_error = if gradient_error_log.is_empty() {
            0.0
        } else {
            gradient_error_log.iter().sum::<f64>() / gradient_error_log.len() as f64
        };
        RunReport {
            total_train_seconds,
            merge_seconds,
            maintenance_calls,
            sv_insertions,
            degradation_log,
            gradient_error_log,
            avg_gradient_error,
            test_accuracy,
            final_sv_count,
            pruned_merges,
            config,
        }
    }

    pub fn max_gradient_error(&self) -> f64 {
        self.gradient_error_log
            .iter()
            .fold(0.0f64, |m, &e| m.max(e))
    }

    /// Whether the regret bound's assumption `‖E_t‖ ≤ 1` held on this run.
    pub fn gradient_error_within_unit(&self) -> bool {
        self.max_gradient_error() <= 1.0
    }

    /// JSON round-trip of the full report, logs included.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Flat CSV header; see [`RunReport::csv_row`] for the column order.
    pub fn csv_header() -> &'static str {
        "strategy,budget,mergees,epochs,seed,lambda,c,gamma,schedule,n_train,\
         test_accuracy,total_train_seconds,merge_seconds,merge_fraction,\
         maintenance_calls,sv_insertions,final_sv_count,avg_gradient_error,\
         max_gradient_error"
    }

    /// The report as one flat CSV row in the header's column order.
    pub fn csv_row(&self) -> String {
        let cfg = &self.config.config;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            cfg.strategy,
            cfg.budget,
            cfg.mergees,
            cfg.epochs,
            cfg.seed,
            self.config.lambda,
            cfg.c.map_or(String::new(), |c| c.to_string()),
            cfg.gamma,
            cfg.schedule,
            self.config.n_train,
            self.test_accuracy,
            self.total_train_seconds,
            self.merge_seconds,
            merge_fraction(self),
            self.maintenance_calls,
            self.sv_insertions,
            self.final_sv_count,
            self.avg_gradient_error,
            self.max_gradient_error(),
        )
    }

    /// Human-readable summary.
    pub fn pretty(&self) -> String {
        let cfg = &self.config.config;
        let mut s = String::new();
        s.push_str(&format!(
            "strategy {} | B {} | M {} | epochs {} | seed {}\n",
            cfg.strategy, cfg.budget, cfg.mergees, cfg.epochs, cfg.seed
        ));
        s.push_str(&format!(
            "lambda {:.6e} | gamma {} | schedule {} | n_train {}\n",
            self.config.lambda, cfg.gamma, cfg.schedule, self.config.n_train
        ));
        s.push_str(&format!(
            "accuracy {:.4}{}\n",
            self.test_accuracy,
            if self.config.eval_on_train {
                " (on training data)"
            } else {
                ""
            }
        ));
        s.push_str(&format!(
            "train {:.3}s | merge {:.3}s ({:.1}% of total)\n",
            self.total_train_seconds,
            self.merge_seconds,
            100.0 * merge_fraction(self)
        ));
        s.push_str(&format!(
            "insertions {} | maintenance calls {} | final SVs {}\n",
            self.sv_insertions, self.maintenance_calls, self.final_sv_count
        ));
        s.push_str(&format!(
            "avg gradient error {:.6e} (max {:.6e}, within unit bound: {})\n",
            self.avg_gradient_error,
            self.max_gradient_error(),
            self.gradient_error_within_unit()
        ));
        let n = self.gradient_error_log.len();
        if n > 0 {
            s.push_str(&format!(
                "regret bound rhs {:.6e}\n",
                theorem1_bound(self, self.config.lambda, n)
            ));
        }
        s
    }
}

/// Fraction of the training wall-clock spent on budget maintenance.
pub fn merge_fraction(report: &RunReport) -> f64 {
    debug_assert!(report.total_train_seconds > 0.0);
    (report.merge_seconds / report.total_train_seconds).clamp(0.0, 1.0)
}

/// Right-hand side of the BSGD regret bound evaluated with this run's Ē:
/// `(λU + 2)²(ln N + 1)/(2λN) + 2UĒ` with `U = 2/λ` for `λ ≤ 4`,
/// `U = 1/√λ` otherwise. Diagnostic only; the `‖E_t‖ ≤ 1` assumption is
/// reported as a flag, not enforced.
pub fn theorem1_bound(report: &RunReport, lambda: f64, n: usize) -> f64 {
    assert!(n >= 1 && lambda > 0.0);
    let u = if lambda <= 4.0 {
        2.0 / lambda
    } else {
        1.0 / lambda.sqrt()
    };
    let n = n as f64;
    (lambda * u + 2.0).powi(2) * ((n).ln() + 1.0) / (2.0 * lambda * n)
        + 2.0 * u * report.avg_gradient_error
}

/// Fraction of points whose prediction matches the label.
pub fn evaluate_accuracy(model: &BudgetedModel, dataset: &Dataset) -> f64 {
    assert!(!dataset.is_empty());
    let correct = (0..dataset.len())
        .filter(|&i| model.predict(dataset.point(i)) == dataset.label(i))
        .count();
    correct as f64 / dataset.len() as f64
}

/// Confusion counts `(tp, fn, fp, tn)` with +1 as the positive class.
pub fn confusion_counts(model: &BudgetedModel, dataset: &Dataset) -> (usize, usize, usize, usize) {
    let (mut tp, mut fn_, mut fp, mut tn) = (0, 0, 0, 0);
    for i in 0..dataset.len() {
        let pred = model.predict(dataset.point(i));
        match (dataset.label(i), pred) {
            (1, 1) => tp += 1,
            (1, -1) => fn_ += 1,
            (-1, 1) => fp += 1,
            (-1, -1) => tn += 1,
            _ => unreachable!("labels are ±1"),
        }
    }
    (tp, fn_, fp, tn)
}
