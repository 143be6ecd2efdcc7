//! Differentially private training with normalized DPSGD and three clipping
//! strategies: constant, adaptive (quantile-tracking) and adaptive with a
//! lower bound on the clipping threshold.
//!
//! The crate also carries the Rényi-DP accountant for the two-query adaptive
//! mechanism, fairness metrics, dataset preprocessing, and a randomized
//! hyperparameter search with conservative privacy charging.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clipping;
pub mod datasets;
pub mod error;
pub mod hpo;
pub mod metrics;
pub mod models;
pub mod numkit;
pub mod privacy;
pub mod trainer;

pub use clipping::{ClippingConfig, ClippingMode, ClippingState, Strategy};
pub use datasets::Dataset;
pub use error::{Error, Result};
pub use metrics::EvalMetrics;
pub use models::{ModelKind, ModelSpec, ModelState};
pub use numkit::{Matrix, Rng};
pub use privacy::{LedgerSummary, MechanismParams, RdpCurve};
pub use trainer::{HistoryRow, OptimizerKind, RunResult, StepBudget, TrainConfig};
