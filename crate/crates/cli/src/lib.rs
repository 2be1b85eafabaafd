//! Experiment runner for the `driftflow` particle-flow filter: the linear,
//! cubic-sensor and quartic comparison experiments, a custom-likelihood
//! driver, and their CSV/JSON/SVG outputs.

// `!(v > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod experiments;
pub mod expr;
pub mod plots;
pub mod svg;

pub use config::{ConfigError, Experiment, ExperimentConfig, Overrides};
pub use experiments::{run, Check, RunOutcome, Summary};
