//! Cramér-von Mises distance between Dirac mixtures, built on localized
//! cumulative distributions, and its gradient with respect to the locations
//! of the first mixture.
//!
//! For mixtures `x` (weights `w`, `L` points) and `y` (weights `u`, `M`
//! points):
//!
//! ```text
//! D = D_yy - 2 D_xy + D_xx + c D_E
//! D_ab = sum_i sum_j a_i b_j xlog(|a_i - b_j|^2)
//! D_E  = |sum_i w_i x_i - sum_j u_j y_j|^2
//! ```
//!
//! `xlog(z) = z ln z` is extended by zero below `log_floor`, so coincident
//! points contribute nothing to either the value or the gradient. The
//! kernel alone is blind to a common translation of both mixtures; the mean
//! penalty `c D_E` pins it.
//!
//! All loops run i-major, then j, then coordinate, so results do not depend
//! on anything but the inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::particles::ParticleSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvmConfig {
    /// Weight `c` of the mean-matching penalty.
    pub mean_penalty_weight: f64,
    /// Whether to evaluate `D_yy`. It does not depend on `x`, so minimizers
    /// can skip it.
    pub include_dyy: bool,
    /// Squared distances below this are treated as coincident points.
    pub log_floor: f64,
}

impl Default for CvmConfig {
    fn default() -> Self {
        Self {
            mean_penalty_weight: 10.0,
            include_dyy: true,
            log_floor: 1e-12,
        }
    }
}

impl CvmConfig {
    pub fn with_penalty(mean_penalty_weight: f64) -> Self {
        Self {
            mean_penalty_weight,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_penalty_weight >= 0.0 && self.mean_penalty_weight.is_finite()) {
            return Err(Error::invalid(
                "mean_penalty_weight",
                format!("{} must be nonnegative", self.mean_penalty_weight),
            ));
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return Err(Error::invalid(
                "log_floor",
                format!("{} must be positive", self.log_floor),
            ));
        }
        Ok(())
    }
}

/// The four components of the distance, kept apart so callers can add
/// `D_yy` back without changing the rounding of the rest.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CvmTerms {
    pub d_yy: f64,
    pub d_xy: f64,
    pub d_xx: f64,
    pub d_mean: f64,
}

impl CvmTerms {
    /// `D_yy + ((-2 D_xy + D_xx) + c D_E)`.
    pub fn total(&self, mean_penalty_weight: f64) -> f64 {
        self.d_yy + self.x_dependent(mean_penalty_weight)
    }

    /// Everything except `D_yy`.
    pub fn x_dependent(&self, mean_penalty_weight: f64) -> f64 {
        (-2.0 * self.d_xy + self.d_xx) + mean_penalty_weight * self.d_mean
    }
}

/// Work counters for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CvmStats {
    /// Number of pairwise kernel evaluations.
    pub kernel_evaluations: u64,
    /// Number of per-coordinate squared-difference accumulations.
    pub coordinate_ops: u64,
}

/// `z ln z`, continuously extended to `0` for `z < log_floor`.
pub fn xlog(z: f64, log_floor: f64) -> Result<f64> {
    if z < 0.0 || z.is_nan() {
        return Err(Error::invalid("z", format!("xlog of {z}")));
    }
    Ok(xlog_unchecked(z, log_floor))
}

#[inline]
fn xlog_unchecked(z: f64, log_floor: f64) -> f64 {
    if z < log_floor {
        0.0
    } else {
        z * z.ln()
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn check_pair(x: &ParticleSet, y: &ParticleSet, cfg: &CvmConfig) -> Result<()> {
    cfg.validate()?;
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: y.dim(),
        });
    }
    x.ensure_normalized()?;
    y.ensure_normalized()
}

/// Distance `D(x, y)`. With `include_dyy = false` the result is offset from
/// the full distance by `-D_yy`.
pub fn cvm_distance(x: &ParticleSet, y: &ParticleSet, cfg: &CvmConfig) -> Result<f64> {
    Ok(cvm_terms(x, y, cfg)?.total(cfg.mean_penalty_weight))
}

/// [`cvm_distance`] together with operation counters.
pub fn cvm_distance_with_stats(x: &ParticleSet, y: &ParticleSet, cfg: &CvmConfig) -> Result<(f64, CvmStats)> {
    check_pair(x, y, cfg)?;
    let mut stats = CvmStats::default();
    let terms = terms_inner(x, y, cfg, &mut stats);
    Ok((terms.total(cfg.mean_penalty_weight), stats))
}

/// Individual distance components.
pub fn cvm_terms(x: &ParticleSet, y: &ParticleSet, cfg: &CvmConfig) -> Result<CvmTerms> {
    check_pair(x, y, cfg)?;
    Ok(terms_inner(x, y, cfg, &mut CvmStats::default()))
}

fn terms_inner(x: &ParticleSet, y: &ParticleSet, cfg: &CvmConfig, stats: &mut CvmStats) -> CvmTerms {
    let dim = x.dim() as u64;
    let pair_sum = |a: &ParticleSet, b: &ParticleSet, stats: &mut CvmStats| {
        let mut total = 0.0;
        for (wa, pa) in a.weights().iter().zip(a.locations()) {
            let mut row = 0.0;
            for (wb, pb) in b.weights().iter().zip(b.locations()) {
                row += wb * xlog_unchecked(sq_dist(pa, pb), cfg.log_floor);
            }
            total += wa * row;
            stats.kernel_evaluations += b.len() as u64;
            stats.coordinate_ops += b.len() as u64 * dim;
        }
        total
    };
    let d_yy = if cfg.include_dyy {
        pair_sum(y, y, stats)
    } else {
        0.0
    };
    let d_xy = pair_sum(x, y, stats);
    let d_xx = pair_sum(x, x, stats);
    let d_mean = x
        .weighted_mean()
        .iter()
        .zip(y.weighted_mean())
        .map(|(mx, my)| (mx - my) * (mx - my))
        .sum();
    CvmTerms {
        d_yy,
        d_xy,
        d_xx,
        d_mean,
    }
}

/// Gradient `dD / dx_{i,d}`, row-major (`L * D` values, one row per point
/// of `x`). Pairs closer than `log_floor` contribute nothing.
pub fn cvm_gradient(x: &ParticleSet, y: &ParticleSet, cfg: &CvmConfig) -> Result<Vec<f64>> {
    Ok(cvm_value_and_gradient(x, y, cfg)?.1)
}

/// Value and gradient in one pass over the pairs.
pub fn cvm_value_and_gradient(x: &ParticleSet, y: &ParticleSet, cfg: &CvmConfig) -> Result<(f64, Vec<f64>)> {
    check_pair(x, y, cfg)?;
    let dim = x.dim();
    let floor = cfg.log_floor;

    let d_yy = if cfg.include_dyy {
        terms_inner(
            y,
            y,
            &CvmConfig {
                include_dyy: false,
                ..*cfg
            },
            &mut CvmStats::default(),
        )
        .d_xx
    } else {
        0.0
    };

    // Accumulates sum_j b_j xlog(s_ij) and sum_j b_j (ln s_ij + 1)(a_i - b_j)
    // for each point of `a` against the mixture `b`.
    let pair_pass = |a: &ParticleSet, b: &ParticleSet, value: &mut f64, grad_rows: &mut [f64]| {
        let mut diff = vec![0.0; dim];
        for (i, (wa, pa)) in a.weights().iter().zip(a.locations()).enumerate() {
            let row_grad = &mut grad_rows[i * dim..(i + 1) * dim];
            let mut row = 0.0;
            for (wb, pb) in b.weights().iter().zip(b.locations()) {
                let mut s = 0.0;
                for d in 0..dim {
                    diff[d] = pa[d] - pb[d];
                    s += diff[d] * diff[d];
                }
                if s < floor {
                    continue;
                }
                let ln = s.ln();
                row += wb * (s * ln);
                let coef = wb * (ln + 1.0);
                for d in 0..dim {
                    row_grad[d] += coef * diff[d];
                }
            }
            *value += wa * row;
        }
    };

    let n = x.len() * dim;
    let mut d_xy = 0.0;
    let mut g_xy = vec![0.0; n];
    pair_pass(x, y, &mut d_xy, &mut g_xy);
    let mut d_xx = 0.0;
    let mut g_xx = vec![0.0; n];
    pair_pass(x, x, &mut d_xx, &mut g_xx);

    let mean_x = x.weighted_mean();
    let mean_y = y.weighted_mean();
    let mean_gap: Vec<f64> = mean_x.iter().zip(&mean_y).map(|(a, b)| a - b).collect();
    let d_mean = mean_gap.iter().map(|g| g * g).sum();

    let c = cfg.mean_penalty_weight;
    let mut grad = vec![0.0; n];
    for (i, &wi) in x.weights().iter().enumerate() {
        for d in 0..dim {
            let k = i * dim + d;
            grad[k] = 4.0 * wi * g_xx[k] - 4.0 * wi * g_xy[k] + c * 2.0 * mean_gap[d] * wi;
        }
    }
    let terms = CvmTerms {
        d_yy,
        d_xy,
        d_xx,
        d_mean,
    };
    Ok((terms.total(c), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single(x: f64) -> ParticleSet {
        ParticleSet::equal_weight_1d(&[x]).unwrap()
    }

    #[test]
    fn xlog_values() {
        assert_eq!(xlog(1.0, 1e-12).unwrap(), 0.0);
        assert_eq!(xlog(0.0, 1e-12).unwrap(), 0.0);
        assert_abs_diff_eq!(xlog(4.0, 1e-12).unwrap(), 5.545_177_444_479_562, epsilon = 1e-12);
        assert!(xlog(-1.0, 1e-12).is_err());
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let s = ParticleSet::new(
            vec![0.2, 0.5, 0.3],
            vec![vec![0.0, 1.0], vec![-1.0, 2.0], vec![3.0, 0.5]],
        )
        .unwrap();
        assert_eq!(cvm_distance(&s, &s, &CvmConfig::with_penalty(1.0)).unwrap(), 0.0);
    }

    #[test]
    fn single_particles() {
        let c0 = CvmConfig::with_penalty(0.0);
        let c1 = CvmConfig::with_penalty(1.0);
        assert_eq!(cvm_distance(&single(0.0), &single(1.0), &c0).unwrap(), 0.0);
        assert_eq!(cvm_distance(&single(0.0), &single(1.0), &c1).unwrap(), 1.0);
        assert_abs_diff_eq!(
            cvm_distance(&single(0.0), &single(2.0), &c0).unwrap(),
            -11.090_354_888_959_125,
            epsilon = 1e-12
        );
    }

    #[test]
    fn dyy_offset_is_constant() {
        let x = ParticleSet::equal_weight_1d(&[0.1, 0.4, 1.3]).unwrap();
        let y = ParticleSet::new(vec![0.6, 0.4], vec![vec![0.0], vec![1.0]]).unwrap();
        let full = cvm_terms(&x, &y, &CvmConfig::default()).unwrap();
        let partial = cvm_distance(
            &x,
            &y,
            &CvmConfig {
                include_dyy: false,
                ..CvmConfig::default()
            },
        )
        .unwrap();
        assert_abs_diff_eq!(full.total(10.0) - partial, full.d_yy, epsilon = 1e-14);
    }

    #[test]
    fn symmetric_minimum_has_zero_gradient() {
        let s = ParticleSet::equal_weight_1d(&[-1.0, 1.0]).unwrap();
        let g = cvm_gradient(&s, &s, &CvmConfig::with_penalty(0.0)).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn single_particle_gradient_matches_closed_form() {
        // D(x) = -2 xlog((x-2)^2) + (x-2)^2 for one particle against one at 2
        let g = cvm_gradient(&single(0.0), &single(2.0), &CvmConfig::with_penalty(1.0)).unwrap();
        let expected = -2.0 * (4.0_f64.ln() + 1.0) * 2.0 * (0.0 - 2.0) + 2.0 * (0.0 - 2.0);
        assert_abs_diff_eq!(g[0], expected, epsilon = 1e-12);
    }

    #[test]
    fn value_and_gradient_agree_with_separate_value() {
        let x = ParticleSet::equal_weight(vec![vec![0.1, 0.2], vec![1.0, -0.4], vec![-0.7, 0.9]]).unwrap();
        let y = ParticleSet::new(vec![0.1, 0.9], vec![vec![0.0, 0.0], vec![0.5, 0.5]]).unwrap();
        let cfg = CvmConfig::default();
        let (v, _) = cvm_value_and_gradient(&x, &y, &cfg).unwrap();
        assert_abs_diff_eq!(v, cvm_distance(&x, &y, &cfg).unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn errors() {
        let a = single(0.0);
        let b = ParticleSet::equal_weight(vec![vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            cvm_distance(&a, &b, &CvmConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
        let u = ParticleSet::new(vec![0.5, 0.2], vec![vec![0.0], vec![1.0]]).unwrap();
        assert!(matches!(
            cvm_gradient(&a, &u, &CvmConfig::default()),
            Err(Error::Unnormalized { .. })
        ));
        let bad = CvmConfig {
            log_floor: 0.0,
            ..CvmConfig::default()
        };
        assert!(cvm_distance(&a, &a, &bad).is_err());
    }

    #[test]
    fn work_is_quadratic_in_count_and_linear_in_dim() {
        let make = |l: usize, d: usize| {
            ParticleSet::equal_weight((0..l).map(|i| vec![i as f64; d]).collect()).unwrap()
        };
        let count = |l, d| {
            let s = make(l, d);
            cvm_distance_with_stats(&s, &s, &CvmConfig::default()).unwrap().1
        };
        let a = count(10, 1);
        let b = count(20, 1);
        let c = count(20, 3);
        assert_eq!(b.kernel_evaluations, 4 * a.kernel_evaluations);
        assert_eq!(c.coordinate_ops, 3 * b.coordinate_ops);
        assert_eq!(a.kernel_evaluations, 3 * 100);
    }
}
