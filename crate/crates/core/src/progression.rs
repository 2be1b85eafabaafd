//! Progressive Bayes update through a sequence of optimized resampling maps.
//!
//! The likelihood is applied in tempered slices `f_L^{dgamma_k}` whose
//! exponents sum to one. After each slice the reweighted particles are
//! replaced by equally weighted ones: an affine + RBF map, started at the
//! identity, is fitted so that the mapped equal-weight set is close to the
//! reweighted set in the Cramér-von Mises sense. The fitted maps form a
//! [`MapChain`] that carries the prior particles to the posterior ones.

use serde::{Deserialize, Serialize};

use crate::distance::{cvm_terms, cvm_value_and_gradient, CvmConfig};
use crate::error::{Error, Result};
use crate::models::Likelihood;
use crate::optimizer::{minimize, BfgsSettings, Termination};
use crate::particles::{ess_of, ParticleSet};
use crate::transport_map::{MapChain, RbfMap};

/// Bisection steps used to locate the largest admissible tempering step.
pub const DGAMMA_BISECTIONS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgressionSettings {
    /// Smallest acceptable `ESS / L` right after a reweight.
    pub ess_floor: f64,
    pub min_dgamma: f64,
    pub max_substeps: usize,
    pub cvm: CvmConfig,
    pub bfgs: BfgsSettings,
    /// Upper bound on the number of kernels per sub-step map.
    pub rbf_count: usize,
}

impl Default for ProgressionSettings {
    fn default() -> Self {
        Self {
            ess_floor: 0.5,
            min_dgamma: 1e-3,
            max_substeps: 64,
            cvm: CvmConfig::default(),
            bfgs: BfgsSettings::default(),
            rbf_count: 8,
        }
    }
}

impl ProgressionSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.ess_floor > 0.0 && self.ess_floor <= 1.0) {
            return Err(Error::invalid("ess_floor", "must lie in (0, 1]"));
        }
        if !(self.min_dgamma > 0.0 && self.min_dgamma <= 1.0) {
            return Err(Error::invalid("min_dgamma", "must lie in (0, 1]"));
        }
        if self.max_substeps == 0 {
            return Err(Error::invalid("max_substeps", "must be positive"));
        }
        self.cvm.validate()?;
        self.bfgs.validate()
    }
}

/// Outcome of the step-size search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepChoice {
    pub dgamma: f64,
    /// No step of at least `min_dgamma` kept `ESS / L` above the floor.
    pub degenerate: bool,
}

/// Diagnostics for one sub-step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstepRecord {
    pub dgamma: f64,
    pub gamma_after: f64,
    pub ess_before_resample: f64,
    /// Full distance (including `D_yy`) at the identity map.
    pub distance_initial: f64,
    /// Full distance at the fitted map.
    pub distance_final: f64,
    pub bfgs_iters: usize,
    pub converged: bool,
    pub termination: Termination,
    pub monotone_descent: bool,
    pub degeneration_warning: bool,
    /// The fit produced no improvement and the identity map was kept.
    pub identity_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub substeps: Vec<SubstepRecord>,
    #[serde(rename = "K")]
    pub k: usize,
    pub cumulative_gamma: f64,
    pub completed: bool,
    pub warnings: Vec<String>,
}

impl FlowReport {
    pub fn dgamma_sum(&self) -> f64 {
        self.substeps.iter().map(|s| s.dgamma).sum()
    }

    pub fn has_degeneration_warning(&self) -> bool {
        self.substeps.iter().any(|s| s.degeneration_warning)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone)]
pub struct FlowOutcome {
    pub posterior: ParticleSet,
    pub chain: MapChain,
    pub report: FlowReport,
}

/// Largest `dgamma` in `[min_dgamma, 1 - gamma_done]` whose reweight keeps
/// `ESS / L >= ess_floor`, found by bisection.
pub fn next_dgamma(
    set: &ParticleSet,
    lik: &Likelihood,
    gamma_done: f64,
    settings: &ProgressionSettings,
) -> Result<StepChoice> {
    let log_lik = set.log_likelihoods(lik)?;
    next_dgamma_from_logs(set, &log_lik, gamma_done, settings)
}

fn next_dgamma_from_logs(
    set: &ParticleSet,
    log_lik: &[f64],
    gamma_done: f64,
    settings: &ProgressionSettings,
) -> Result<StepChoice> {
    if !(0.0..1.0).contains(&gamma_done) {
        return Err(Error::invalid(
            "gamma_done",
            format!("{gamma_done} not in [0, 1)"),
        ));
    }
    set.ensure_normalized()?;
    let remaining = 1.0 - gamma_done;
    if remaining <= settings.min_dgamma {
        return Ok(StepChoice {
            dgamma: remaining,
            degenerate: false,
        });
    }
    let count = set.len() as f64;
    let admissible = |dg: f64| match set.reweight_with_log_likelihoods(log_lik, dg) {
        Ok(s) => ess_of(s.weights()) / count >= settings.ess_floor,
        Err(_) => false,
    };
    if admissible(remaining) {
        return Ok(StepChoice {
            dgamma: remaining,
            degenerate: false,
        });
    }
    if !admissible(settings.min_dgamma) {
        return Ok(StepChoice {
            dgamma: settings.min_dgamma,
            degenerate: true,
        });
    }
    let (mut lo, mut hi) = (settings.min_dgamma, remaining);
    for _ in 0..DGAMMA_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if admissible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(StepChoice {
        dgamma: lo,
        degenerate: false,
    })
}

/// Fits the resampling map for one sub-step: equal-weight particles at
/// `map(current)` against `reference` (the reweighted `current`).
fn fit_substep_map(
    current: &ParticleSet,
    reference: &ParticleSet,
    settings: &ProgressionSettings,
) -> Result<(RbfMap, SubstepFit)> {
    let base = RbfMap::identity_on(current, settings.rbf_count)?;
    let cfg = CvmConfig {
        include_dyy: false,
        ..settings.cvm
    };
    let dim = current.dim();
    let xs = current.locations_flat();
    let param_count = base.param_count();

    let objective = |theta: &[f64]| -> (f64, Vec<f64>) {
        let eval = || -> Result<(f64, Vec<f64>)> {
            let map = base.with_params(theta)?;
            let mapped = map.apply_batch(xs)?;
            let candidate = ParticleSet::equal_weight_flat(dim, mapped);
            let (value, upstream) = cvm_value_and_gradient(&candidate, reference, &cfg)?;
            Ok((value, map.param_gradient(xs, &upstream)?))
        };
        eval().unwrap_or_else(|_| (f64::NAN, vec![f64::NAN; param_count]))
    };

    let start = base.params();
    let initial = objective(&start).0;
    let d_yy = cvm_terms(reference, reference, &cfg)?.d_xx;
    let fit = match minimize(objective, &start, &settings.bfgs) {
        Ok(out) => {
            let improved = out.value < initial;
            let fallback = !out.converged && !improved;
            let map = if fallback {
                base.clone()
            } else {
                base.with_params(&out.argmin)?
            };
            let final_partial = if fallback { initial } else { out.value };
            let monotone = out.is_monotone();
            (
                map,
                SubstepFit {
                    distance_initial: d_yy + initial,
                    distance_final: d_yy + final_partial,
                    iters: out.iters,
                    converged: out.converged,
                    termination: out.termination,
                    monotone,
                    fallback,
                },
            )
        }
        Err(_) => (
            base.clone(),
            SubstepFit {
                distance_initial: d_yy + initial,
                distance_final: d_yy + initial,
                iters: 0,
                converged: false,
                termination: Termination::NonFinite,
                monotone: true,
                fallback: true,
            },
        ),
    };
    Ok(fit)
}

struct SubstepFit {
    distance_initial: f64,
    distance_final: f64,
    iters: usize,
    converged: bool,
    termination: Termination,
    monotone: bool,
    fallback: bool,
}

/// Runs the full progressive update on an equally weighted prior.
///
/// If `max_substeps` runs out before the likelihood is fully applied the
/// partial result is returned with `report.completed == false`.
pub fn flow_update(
    prior: &ParticleSet,
    lik: &Likelihood,
    settings: &ProgressionSettings,
) -> Result<FlowOutcome> {
    settings.validate()?;
    let equal = 1.0 / prior.len() as f64;
    if let Some((index, &value)) = prior
        .weights()
        .iter()
        .enumerate()
        .find(|(_, &w)| (w - equal).abs() > 1e-12)
    {
        return Err(Error::InvalidWeight { index, value });
    }

    let dim = prior.dim();
    let mut current = ParticleSet::equal_weight_flat(dim, prior.locations_flat().to_vec());
    let mut chain = MapChain::new(dim);
    let mut substeps = Vec::new();
    let mut warnings = Vec::new();
    let mut gamma_done = 0.0;
    let mut completed = false;

    for k in 0..settings.max_substeps {
        let log_lik = current.log_likelihoods(lik)?;
        let choice = next_dgamma_from_logs(&current, &log_lik, gamma_done, settings)?;
        let is_last = choice.dgamma >= 1.0 - gamma_done;
        let reference = current.reweight_with_log_likelihoods(&log_lik, choice.dgamma)?;
        let ess = ess_of(reference.weights());
        if choice.degenerate {
            warnings.push(format!(
                "sub-step {k}: degeneration, ESS/L = {:.4} below floor {} at minimum step {}",
                ess / current.len() as f64,
                settings.ess_floor,
                settings.min_dgamma
            ));
        }

        let (map, fit) = fit_substep_map(&current, &reference, settings)?;
        if fit.fallback {
            warnings.push(format!(
                "sub-step {k}: map fit made no progress ({:?}); identity map kept",
                fit.termination
            ));
        }
        let moved = map.apply_batch(current.locations_flat())?;
        current = ParticleSet::equal_weight_flat(dim, moved);
        chain.push(map)?;

        gamma_done = if is_last { 1.0 } else { gamma_done + choice.dgamma };
        substeps.push(SubstepRecord {
            dgamma: choice.dgamma,
            gamma_after: gamma_done,
            ess_before_resample: ess,
            distance_initial: fit.distance_initial,
            distance_final: fit.distance_final,
            bfgs_iters: fit.iters,
            converged: fit.converged,
            termination: fit.termination,
            monotone_descent: fit.monotone,
            degeneration_warning: choice.degenerate,
            identity_fallback: fit.fallback,
        });
        if is_last {
            completed = true;
            break;
        }
    }
    if !completed {
        warnings.push(format!(
            "sub-step budget of {} exhausted at gamma = {gamma_done}",
            settings.max_substeps
        ));
    }

    let report = FlowReport {
        k: substeps.len(),
        substeps,
        cumulative_gamma: gamma_done,
        completed,
        warnings,
    };
    Ok(FlowOutcome {
        posterior: current,
        chain,
        report,
    })
}
