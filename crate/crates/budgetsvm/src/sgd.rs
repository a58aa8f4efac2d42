//! The BSGD training loop: Pegasos-style stochastic gradient steps on the
//! regularized hinge loss with budget-maintenance dispatch.
//!
//! Each step presents one training point: the model is shrunk by the factor
//! `1 − λη_t`, and if the point's functional margin (computed on the
//! pre-step model) is below one, a support vector with coefficient `η_t·y`
//! is appended. When the insertion overflows the budget, maintenance runs
//! and the incurred weight degradation is recorded.

use std::time::Instant;

use thiserror::Error;

use crate::data::{shuffled_indices, Dataset};
use crate::diagnostics::{evaluate_accuracy, ConfigEcho, RunReport};
use crate::kernel::SparseVector;
use crate::merge::{
    budget_maintain, GoldenSectionParams, GradientDescentParams, MaintenanceParams, MergeError,
    Strategy,
};
use crate::model::BudgetedModel;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("exactly one of lambda and C must be given")]
    LambdaOrC,
    #[error("{name} must be positive")]
    NonPositive { name: &'static str },
    #[error("budget must be at least 2, got {0}")]
    BudgetTooSmall(usize),
    #[error("mergees must be at least 2, got {0}")]
    MergeesTooSmall(usize),
    #[error("mergees ({m}) must not exceed the budget ({b})")]
    MergeesExceedBudget { m: usize, b: usize },
    #[error("strategy 'merge' is the classic binary merge and requires mergees = 2, got {0}")]
    ClassicMergeNeedsTwo(usize),
    #[error("epochs must be at least 1")]
    NoEpochs,
    #[error(
        "constant learning rate {eta} is unstable for lambda {lambda}: lambda*eta must be < 1"
    )]
    RateTooLarge { eta: f64, lambda: f64 },
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Merge(#[from] MergeError),
}

/// Learning-rate schedule; the concrete Θ(1/t) instance is `1/(λt)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum LrSchedule {
    /// `η_t = 1/(λ·t)`.
    Pegasos,
    /// Fixed `η_t = η₀` (requires `λ·η₀ < 1`).
    Constant(f64),
}

impl LrSchedule {
    fn eta(self, t: usize, lambda: f64) -> f64 {
        match self {
            LrSchedule::Pegasos => learning_rate(t, lambda),
            LrSchedule::Constant(eta0) => eta0,
        }
    }
}

impl std::str::FromStr for LrSchedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "pegasos" {
            return Ok(LrSchedule::Pegasos);
        }
        if let Some(v) = s.strip_prefix("const:") {
            let eta0: f64 = v
                .parse()
                .map_err(|_| format!("bad constant learning rate '{v}'"))?;
            return Ok(LrSchedule::Constant(eta0));
        }
        Err(format!(
            "unknown schedule '{s}' (expected 'pegasos' or 'const:<eta>')"
        ))
    }
}

impl std::fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LrSchedule::Pegasos => f.write_str("pegasos"),
            LrSchedule::Constant(eta0) => write!(f, "const:{eta0}"),
        }
    }
}

/// `η_t = 1/(λ·t)`, the Pegasos schedule.
pub fn learning_rate(t: usize, lambda: f64) -> f64 {
    debug_assert!(t >= 1 && lambda > 0.0);
    1.0 / (lambda * t as f64)
}

/// Training configuration. Exactly one of `lambda` and `c` must be set;
/// with `c`, `λ = 1/(n·C)` is derived at training start.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub lambda: Option<f64>,
    pub c: Option<f64>,
    pub gamma: f64,
    pub budget: usize,
    pub mergees: usize,
    pub strategy: Strategy,
    pub epochs: usize,
    pub seed: u64,
    pub schedule: LrSchedule,
    pub golden: GoldenSectionParams,
    pub gd: GradientDescentParams,
    pub gd_refine: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: None,
            c: None,
            gamma: 1.0,
            budget: 100,
            mergees: 2,
            strategy: Strategy::MmBsgd,
            epochs: 1,
            seed: 1,
            schedule: LrSchedule::Pegasos,
            golden: GoldenSectionParams::default(),
            gd: GradientDescentParams::default(),
            gd_refine: false,
        }
    }
}

/// How many support vectors a merge-family maintenance event combines.
fn merge_count(config: &TrainConfig) -> usize {
    match config.strategy {
        Strategy::Merge => 2,
        _ => config.mergees,
    }
}

impl TrainConfig {
    /// Validates the configuration against a training set of size `n` and
    /// resolves the regularization parameter.
    pub fn resolve(&self, n: usize) -> Result<ResolvedConfig, ConfigError> {
        let lambda = match (self.lambda, self.c) {
            (Some(l), None) => l,
            (None, Some(c)) => {
                if c <= 0.0 {
                    return Err(ConfigError::NonPositive { name: "C" });
                }
                1.0 / (n as f64 * c)
            }
            _ => return Err(ConfigError::LambdaOrC),
        };
        if lambda <= 0.0 {
            return Err(ConfigError::NonPositive { name: "lambda" });
        }
        if self.gamma <= 0.0 {
            return Err(ConfigError::NonPositive { name: "gamma" });
        }
        if self.budget < 2 {
            return Err(ConfigError::BudgetTooSmall(self.budget));
        }
        if self.mergees < 2 {
            return Err(ConfigError::MergeesTooSmall(self.mergees));
        }
        if self.mergees > self.budget {
            return Err(ConfigError::MergeesExceedBudget {
                m: self.mergees,
                b: self.budget,
            });
        }
        if self.strategy == Strategy::Merge && self.mergees != 2 {
            return Err(ConfigError::ClassicMergeNeedsTwo(self.mergees));
        }
        if self.epochs == 0 {
            return Err(ConfigError::NoEpochs);
        }
        if self.golden.tol <= 0.0 || self.gd.epsilon <= 0.0 {
            return Err(ConfigError::NonPositive { name: "tolerance" });
        }
        if let LrSchedule::Constant(eta0) = self.schedule {
            if eta0 <= 0.0 {
                return Err(ConfigError::NonPositive { name: "eta0" });
            }
            if lambda * eta0 >= 1.0 {
                return Err(ConfigError::RateTooLarge { eta: eta0, lambda });
            }
        }
        Ok(ResolvedConfig {
            lambda,
            config: self.clone(),
        })
    }

    fn maintenance_params(&self) -> MaintenanceParams {
        MaintenanceParams {
            strategy: self.strategy,
            mergees: self.mergees,
            golden: self.golden,
            gd: self.gd,
            gd_refine: self.gd_refine,
        }
    }
}

/// A validated configuration with the regularization parameter resolved.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub lambda: f64,
    pub config: TrainConfig,
}

/// What one SGD step did; feeds the diagnostics report.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepOutcome {
    pub margin_violated: bool,
    pub sv_added: bool,
    pub maintenance_triggered: bool,
    /// Realized `‖Δ‖²` when maintenance ran.
    pub degradation_sq: Option<f64>,
    /// The merge replacement cancelled to exactly 0 and was pruned.
    pub replacement_pruned: bool,
    /// Wall-clock nanoseconds spent inside budget maintenance.
    pub merge_nanos: u64,
}

/// One stochastic gradient step at global step counter `t ≥ 1`.
///
/// The margin test uses the pre-step model: the margin is computed before
/// the shrink of the current step. At `t = 1` the Pegasos factor
/// `1 − λη₁` is exactly 0 and the weight vector is zeroed, which matches
/// eagerly rescaling every coefficient by 0.
pub fn sgd_step(
    model: &mut BudgetedModel,
    x: &SparseVector,
    y: i8,
    t: usize,
    rcfg: &ResolvedConfig,
) -> Result<StepOutcome, MergeError> {
    let lambda = rcfg.lambda;
    let eta = rcfg.config.schedule.eta(t, lambda);
    let margin = model.margin(x);

    let factor = 1.0 - lambda * eta;
    if factor <= 0.0 {
        model.clear();
    } else {
        model.rescale(factor);
    }

    let mut outcome = StepOutcome {
        margin_violated: (y as f64) * margin < 1.0,
        ..StepOutcome::default()
    };
    if outcome.margin_violated {
        model
            .add_sv(x.clone(), eta * y as f64)
            .expect("eta*y is nonzero");
        outcome.sv_added = true;
        if model.num_svs() > model.budget() {
            let before = model.num_svs();
            let started = Instant::now();
            let degradation = budget_maintain(model, &rcfg.config.maintenance_params())?;
            outcome.merge_nanos = started.elapsed().as_nanos() as u64;
            outcome.maintenance_triggered = true;
            outcome.degradation_sq = Some(degradation);
            if rcfg.config.strategy != Strategy::Removal {
                // a merge normally removes M − 1; an exactly-cancelled
                // replacement is pruned and removes M
                let removed = before - model.num_svs();
                outcome.replacement_pruned = removed == merge_count(&rcfg.config);
            }
        }
    }
    debug_assert!(model.num_svs() <= model.budget() + 1);
    Ok(outcome)
}

/// Trains for `epochs` passes over `train` with per-epoch reshuffling; the
/// step counter `t` is global across epochs. Deterministic given the seed
/// (timing fields aside). Accuracy is evaluated on `test` when given,
/// otherwise on the training set.
pub fn train(
    train: &Dataset,
    test: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<(BudgetedModel, RunReport), TrainError> {
    let n = train.len();
    let rcfg = config.resolve(n)?;
    let mut model = BudgetedModel::new(config.budget, config.gamma);

    let total_steps = config.epochs * n;
    let mut degradation_log = Vec::new();
    let mut gradient_error_log = Vec::with_capacity(total_steps);
    let mut sv_insertions = 0usize;
    let mut maintenance_calls = 0usize;
    let mut pruned_merges = 0usize;
    let mut merge_nanos = 0u64;

    let started = Instant::now();
    let mut t = 1usize;
    for epoch in 1..=config.epochs {
        for &i in &shuffled_indices(n, epoch as u64, config.seed) {
            let outcome = sgd_step(&mut model, train.point(i), train.label(i), t, &rcfg)?;
            if outcome.sv_added {
                sv_insertions += 1;
            }
            if let Some(deg) = outcome.degradation_sq {
                maintenance_calls += 1;
                merge_nanos += outcome.merge_nanos;
                degradation_log.push(deg);
                pruned_merges += usize::from(outcome.replacement_pruned);
                let eta = config.schedule.eta(t, rcfg.lambda);
                gradient_error_log.push(deg.sqrt() / eta);
            } else {
                // steps without maintenance perturb the gradient by nothing
                gradient_error_log.push(0.0);
            }
            t += 1;
        }
    }
    let total_train_seconds = started.elapsed().as_secs_f64();

    let eval_set = test.unwrap_or(train);
    let test_accuracy = evaluate_accuracy(&model, eval_set);

    let echo = ConfigEcho {
        config: config.clone(),
        lambda: rcfg.lambda,
        n_train: n,
        eval_on_train: test.is_none(),
    };
    let report = RunReport::assemble(
        total_train_seconds,
        merge_nanos as f64 * 1e-9,
        maintenance_calls,
        sv_insertions,
        degradation_log,
        gradient_error_log,
        test_accuracy,
        model.num_svs(),
        pruned_merges,
        echo,
    );
    Ok((model, report))
}
