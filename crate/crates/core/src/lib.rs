//! Deterministic particle flows for Bayesian measurement updates.
//!
//! A prior given only as equally weighted particles is carried to the
//! posterior by a sequence of small, optimized resampling maps. Each map
//! absorbs one tempered slice of the likelihood; the composed chain is the
//! full prior-to-posterior flow. No intermediate density estimate is formed
//! and no randomness is involved.
//!
//! ```
//! use driftflow::{deterministic_gaussian_samples, flow_update, linear_likelihood};
//! use driftflow::{GaussianSpec, ProgressionSettings};
//!
//! let prior = deterministic_gaussian_samples(GaussianSpec::standard(), 20).unwrap();
//! let lik = linear_likelihood(1.0, 1.0).unwrap();
//! let out = flow_update(&prior, &lik, &ProgressionSettings::default()).unwrap();
//! let mean = out.posterior.weighted_mean()[0];
//! assert!((mean - 0.5).abs() < 0.1);
//! ```

// `!(v > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod distance;
pub mod error;
pub mod models;
pub mod optimizer;
pub mod oracle;
pub mod particles;
pub mod progression;
pub mod transport_map;

pub use distance::{cvm_distance, cvm_gradient, cvm_terms, cvm_value_and_gradient, xlog, CvmConfig};
pub use error::{Error, Result};
pub use models::{
    cubic_likelihood, deterministic_gaussian_samples, linear_likelihood, quartic_likelihood,
    random_gaussian_samples, sir_baseline, standard_normal_quantile, GaussianSpec, Likelihood,
};
pub use optimizer::{minimize, BfgsOutcome, BfgsSettings, Termination};
pub use oracle::{
    grid_posterior, grid_posterior_gaussian, kalman_posterior, w1_particles_vs_grid, GridPosterior,
};
pub use particles::ParticleSet;
pub use progression::{
    flow_update, next_dgamma, FlowOutcome, FlowReport, ProgressionSettings, StepChoice, SubstepRecord,
};
pub use transport_map::{MapChain, RbfMap};
