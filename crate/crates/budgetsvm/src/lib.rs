//! Budgeted kernel SVM training with multi-merge budget maintenance.
//!
//! The model is a Gaussian-kernel expansion capped at a budget of B support
//! vectors. Training runs Pegasos-style stochastic gradient descent on the
//! regularized hinge loss; whenever an insertion overflows the budget, a
//! maintenance strategy (removal, binary merging, or multi-merge of M
//! support vectors by cascaded binary merges or direct gradient descent)
//! reduces the expansion back under the cap while minimizing the weight
//! degradation `‖w′ − w‖²`.

pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod kernel;
pub mod merge;
pub mod model;
pub mod sgd;

pub use data::{DataError, Dataset};
pub use diagnostics::RunReport;
pub use kernel::{DegenerateWeights, SparseVector};
pub use merge::{MergeError, Strategy};
pub use model::{BudgetedModel, ModelError, SupportVector};
pub use sgd::{train, ConfigError, TrainConfig, TrainError};
