//! BFGS quasi-Newton minimization with a backtracking Armijo line search.
//!
//! The inverse-Hessian approximation starts at the identity. Updates whose
//! curvature `s^T y` is not safely positive are skipped rather than damped,
//! which keeps the approximation positive definite without a Wolfe search.
//! While the approximation is still the identity, trial steps are capped in
//! length (`identity_step_max`) and the first accepted update rescales it by
//! `s^T y / y^T y`, so the first moves are not dictated by the raw gradient
//! magnitude.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BfgsSettings {
    /// Stop when the max-norm of the gradient falls to this value.
    pub grad_tol: f64,
    pub max_iters: usize,
    pub armijo_c1: f64,
    pub backtrack_factor: f64,
    pub initial_step: f64,
    /// Line-search attempts before giving up on an iteration.
    pub max_backtracks: usize,
    /// Longest trial step (Euclidean) while the inverse Hessian is still
    /// the identity.
    pub identity_step_max: f64,
}

impl Default for BfgsSettings {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            max_iters: 200,
            armijo_c1: 1e-4,
            backtrack_factor: 0.5,
            initial_step: 1.0,
            max_backtracks: 40,
            identity_step_max: 0.5,
        }
    }
}

impl BfgsSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return Err(Error::invalid("grad_tol", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be positive"));
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return Err(Error::invalid("armijo_c1", "must lie in (0, 1)"));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::invalid("backtrack_factor", "must lie in (0, 1)"));
        }
        if !(self.initial_step > 0.0) {
            return Err(Error::invalid("initial_step", "must be positive"));
        }
        if !(self.identity_step_max > 0.0) {
            return Err(Error::invalid("identity_step_max", "must be positive"));
        }
        Ok(())
    }
}

/// Why the minimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    /// No acceptable step within the backtracking budget.
    LineSearchFailed,
    /// The objective produced NaN/inf at every trial point of an iteration.
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsOutcome {
    pub argmin: Vec<f64>,
    pub value: f64,
    pub iters: usize,
    pub converged: bool,
    pub termination: Termination,
    /// Objective at the start and after every accepted step.
    pub accepted_values: Vec<f64>,
    pub evaluations: usize,
}

impl BfgsOutcome {
    /// True when no accepted step increased the objective.
    pub fn is_monotone(&self) -> bool {
        self.accepted_values.windows(2).all(|w| w[1] <= w[0])
    }
}

/// Minimizes `objective`, which returns `(value, gradient)` for a parameter
/// vector. The returned value never exceeds the value at `start`.
pub fn minimize<F>(mut objective: F, start: &[f64], settings: &BfgsSettings) -> Result<BfgsOutcome>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    settings.validate()?;
    let n = start.len();
    let mut eval = |theta: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let (v, g) = objective(theta.as_slice());
        if g.len() != n {
            return Err(Error::CountMismatch {
                expected: n,
                found: g.len(),
            });
        }
        Ok((v, DVector::from_vec(g)))
    };

    let mut x = DVector::from_column_slice(start);
    let (mut f, mut g) = eval(&x)?;
    let mut evaluations = 1;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "objective at start: value {f}, gradient {:?}",
            g.as_slice()
        )));
    }

    let mut h = DMatrix::<f64>::identity(n, n);
    let mut h_is_identity = true;
    let mut accepted_values = vec![f];
    let mut iters = 0;
    let termination = loop {
        if g.amax() <= settings.grad_tol {
            break Termination::GradientTolerance;
        }
        if iters >= settings.max_iters {
            break Termination::MaxIterations;
        }

        let mut p = -(&h * &g);
        let mut slope = g.dot(&p);
        if !(slope < 0.0) {
            h.fill_with_identity();
            h_is_identity = true;
            p = -g.clone();
            slope = g.dot(&p);
        }

        let mut step = settings.initial_step;
        if h_is_identity {
            step = step.min(settings.identity_step_max / p.norm());
        }
        let mut accepted = None;
        let mut saw_finite = false;
        for _ in 0..settings.max_backtracks {
            let trial = &x + step * &p;
            let (ft, gt) = eval(&trial)?;
            evaluations += 1;
            let finite = ft.is_finite() && gt.iter().all(|v| v.is_finite());
            saw_finite |= finite;
            if finite && ft <= f + settings.armijo_c1 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= settings.backtrack_factor;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            break if saw_finite {
                Termination::LineSearchFailed
            } else {
                Termination::NonFinite
            };
        };

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-10 * s.norm() * y.norm() {
            if h_is_identity {
                h *= sy / y.norm_squared();
                h_is_identity = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (H y s^T + s y^T H) + (rho^2 y^T H y + rho) s s^T
            h -= rho * (&hy * s.transpose() + &s * hy.transpose());
            h += (rho * rho * yhy + rho) * (&s * s.transpose());
        }

        x = x_new;
        f = f_new;
        g = g_new;
        iters += 1;
        accepted_values.push(f);
    };

    Ok(BfgsOutcome {
        argmin: x.as_slice().to_vec(),
        value: f,
        iters,
        converged: termination == Termination::GradientTolerance,
        termination,
        accepted_values,
        evaluations,
    })
}
