//! Ground truth for scalar experiments: the Kalman posterior of the linear
//! Gaussian model, a trapezoid-rule posterior on a fixed grid, and the
//! Wasserstein-1 distance between a weighted particle set and such a grid
//! posterior.

use std::io::Write;

use crate::error::{Error, Result};
use crate::models::{GaussianSpec, Likelihood};
use crate::particles::{fmt_full, ParticleSet};

/// Default grid half-width in prior standard deviations.
pub const GRID_HALF_WIDTH_STDS: f64 = 8.0;
/// Default number of grid points.
pub const GRID_POINTS: usize = 4001;
/// Smallest grid accepted by [`grid_posterior`].
pub const MIN_GRID_POINTS: usize = 1000;

/// Posterior of `x ~ N(m_p, s_p)` after observing `y = x + v`,
/// `v ~ N(0, noise_std)`.
pub fn kalman_posterior(prior: GaussianSpec, y_hat: f64, noise_std: f64) -> Result<GaussianSpec> {
    if !(prior.std > 0.0) {
        return Err(Error::invalid("prior.std", "must be positive"));
    }
    if !(noise_std > 0.0) {
        return Err(Error::invalid("noise_std", "must be positive"));
    }
    let vp = prior.variance();
    let vv = noise_std * noise_std;
    let mean = (vp * y_hat + vv * prior.mean) / (vp + vv);
    let variance = vp * vv / (vp + vv);
    GaussianSpec::new(mean, variance.sqrt())
}

/// A 1-D posterior tabulated on an equispaced grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPosterior {
    grid: Vec<f64>,
    density: Vec<f64>,
    cdf: Vec<f64>,
}

/// Tabulates `exp(prior_logpdf(x) + log f_L(x))` on `n` points of
/// `[lo, hi]`, normalized by the trapezoid rule.
///
/// The density at both endpoints must be below `1e-10` of its maximum;
/// otherwise the interval is considered too narrow.
pub fn grid_posterior<P>(
    prior_logpdf: P,
    lik: &Likelihood,
    lo: f64,
    hi: f64,
    n: usize,
) -> Result<GridPosterior>
where
    P: Fn(f64) -> f64,
{
    if !(lo < hi) {
        return Err(Error::Grid(format!("empty interval [{lo}, {hi}]")));
    }
    if n < MIN_GRID_POINTS {
        return Err(Error::Grid(format!(
            "{n} points, need at least {MIN_GRID_POINTS}"
        )));
    }
    let h = (hi - lo) / (n - 1) as f64;
    let grid: Vec<f64> = (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + i as f64 * h })
        .collect();
    let logs: Vec<f64> = grid
        .iter()
        .map(|&x| prior_logpdf(x) + lik.log_eval(&[x]))
        .collect();
    if logs.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(Error::Grid("log density is NaN or +inf on the grid".into()));
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Grid("zero total mass".into()));
    }
    let mut density: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    if density[0] >= 1e-10 || density[n - 1] >= 1e-10 {
        return Err(Error::Grid(format!(
            "posterior mass reaches the grid ends (relative density {:.3e} / {:.3e})",
            density[0],
            density[n - 1]
        )));
    }
    let mass = trapezoid(&grid, &density);
    for d in density.iter_mut() {
        *d /= mass;
    }
    let mut cdf = Vec::with_capacity(n);
    cdf.push(0.0);
    let mut acc = 0.0;
    for i in 1..n {
        acc += 0.5 * (grid[i] - grid[i - 1]) * (density[i] + density[i - 1]);
        cdf.push(acc);
    }
    Ok(GridPosterior { grid, density, cdf })
}

/// Grid posterior for a Gaussian prior on `mean +- 8 std` with 4001 points.
pub fn grid_posterior_gaussian(prior: GaussianSpec, lik: &Likelihood) -> Result<GridPosterior> {
    let half = GRID_HALF_WIDTH_STDS * prior.std;
    grid_posterior(
        |x| prior.log_density_unnormalized(x),
        lik,
        prior.mean - half,
        prior.mean + half,
        GRID_POINTS,
    )
}

fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

impl GridPosterior {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    pub fn lo(&self) -> f64 {
        self.grid[0]
    }

    pub fn hi(&self) -> f64 {
        self.grid[self.grid.len() - 1]
    }

    pub fn mean(&self) -> f64 {
        let xf: Vec<f64> = self.grid.iter().zip(&self.density).map(|(x, f)| x * f).collect();
        trapezoid(&self.grid, &xf)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let vf: Vec<f64> = self
            .grid
            .iter()
            .zip(&self.density)
            .map(|(x, f)| (x - m) * (x - m) * f)
            .collect();
        trapezoid(&self.grid, &vf)
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Trapezoid integral of `g(x) f(x)` over the grid.
    pub fn expectation<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        let gf: Vec<f64> = self
            .grid
            .iter()
            .zip(&self.density)
            .map(|(&x, f)| g(x) * f)
            .collect();
        trapezoid(&self.grid, &gf)
    }

    /// CDF by linear interpolation; 0 left of the grid, 1 right of it.
    pub fn cdf_at(&self, x: f64) -> f64 {
        let n = self.grid.len();
        if x <= self.grid[0] {
            return if x < self.grid[0] { 0.0 } else { self.cdf[0] };
        }
        if x >= self.grid[n - 1] {
            return if x > self.grid[n - 1] {
                1.0
            } else {
                self.cdf[n - 1]
            };
        }
        let k = self.grid.partition_point(|&g| g <= x);
        let (x0, x1) = (self.grid[k - 1], self.grid[k]);
        let t = (x - x0) / (x1 - x0);
        self.cdf[k - 1] + t * (self.cdf[k] - self.cdf[k - 1])
    }

    /// Inverse of the interpolated CDF; `quantile(0) = lo`, `quantile(1) = hi`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid("p", format!("{p} not in [0, 1]")));
        }
        let n = self.grid.len();
        if p == 0.0 {
            return Ok(self.lo());
        }
        if p == 1.0 {
            return Ok(self.hi());
        }
        let k = self.cdf.partition_point(|&c| c < p);
        if k == 0 {
            return Ok(self.grid[0]);
        }
        if k >= n {
            return Ok(self.hi());
        }
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        if c1 <= c0 {
            return Ok(self.grid[k]);
        }
        let t = (p - c0) / (c1 - c0);
        Ok(self.grid[k - 1] + t * (self.grid[k] - self.grid[k - 1]))
    }

    /// `L` equally weighted samples at the midpoint quantiles `(i - 0.5)/L`.
    pub fn quantile_samples(&self, count: usize) -> Result<ParticleSet> {
        if count == 0 {
            return Err(Error::EmptySet);
        }
        let xs = (0..count)
            .map(|i| self.quantile((i as f64 + 0.5) / count as f64))
            .collect::<Result<Vec<f64>>>()?;
        ParticleSet::equal_weight_1d(&xs)
    }

    /// Writes `x,pdf,cdf` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["x", "pdf", "cdf"])?;
        for ((x, f), c) in self.grid.iter().zip(&self.density).zip(&self.cdf) {
            wtr.write_record([fmt_full(*x), fmt_full(*f), fmt_full(*c)])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `int |F_particles(x) - F_grid(x)| dx`, with `F_particles` the
/// right-continuous weighted empirical CDF and `F_grid` the linearly
/// interpolated grid CDF. Particle locations are added as breakpoints so
/// the piecewise-linear integrand is integrated exactly, including sign
/// changes inside a cell. Particles outside the grid extend the domain.
pub fn w1_particles_vs_grid(set: &ParticleSet, gp: &GridPosterior) -> Result<f64> {
    if set.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: set.dim(),
        });
    }
    set.ensure_normalized()?;
    let mut particles: Vec<(f64, f64)> = set
        .locations()
        .zip(set.weights())
        .map(|(x, &w)| (x[0], w))
        .collect();
    particles.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut breaks: Vec<f64> = Vec::with_capacity(gp.grid.len() + particles.len());
    {
        let (mut i, mut j) = (0, 0);
        while i < gp.grid.len() || j < particles.len() {
            let take_grid = j >= particles.len() || (i < gp.grid.len() && gp.grid[i] <= particles[j].0);
            let v = if take_grid {
                i += 1;
                gp.grid[i - 1]
            } else {
                j += 1;
                particles[j - 1].0
            };
            if breaks.last() != Some(&v) {
                breaks.push(v);
            }
        }
    }

    let mut total = 0.0;
    let mut next_particle = 0;
    let mut mass = 0.0;
    for seg in breaks.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        while next_particle < particles.len() && particles[next_particle].0 <= a {
            mass += particles[next_particle].1;
            next_particle += 1;
        }
        let g0 = gp.cdf_at_segment_start(a) - mass;
        let g1 = gp.cdf_at_segment_end(b) - mass;
        total += (b - a) * abs_linear_mean(g0, g1);
    }
    Ok(total)
}

/// Mean of `|g|` over a segment on which `g` is linear from `g0` to `g1`.
fn abs_linear_mean(g0: f64, g1: f64) -> f64 {
    if (g0 >= 0.0) == (g1 >= 0.0) {
        0.5 * (g0.abs() + g1.abs())
    } else {
        0.5 * (g0 * g0 + g1 * g1) / (g0.abs() + g1.abs())
    }
}

impl GridPosterior {
    // Segment endpoints: outside the grid the CDF is flat at 0 or 1, inside
    // the interpolated value is continuous.
    fn cdf_at_segment_start(&self, x: f64) -> f64 {
        if x < self.lo() {
            0.0
        } else {
            self.cdf_at(x)
        }
    }

    fn cdf_at_segment_end(&self, x: f64) -> f64 {
        if x > self.hi() {
            1.0
        } else if x < self.lo() {
            0.0
        } else {
            self.cdf_at(x)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{linear_likelihood, quartic_likelihood};
    use approx::assert_abs_diff_eq;

    fn std_normal_grid() -> GridPosterior {
        grid_posterior_gaussian(GaussianSpec::standard(), &Likelihood::flat()).unwrap()
    }

    #[test]
    fn kalman_values() {
        let post = kalman_posterior(GaussianSpec::standard(), 1.3, 1.0).unwrap();
        assert_abs_diff_eq!(post.mean, 0.65, epsilon = 1e-15);
        assert_abs_diff_eq!(post.variance(), 0.5, epsilon = 1e-15);
        let post = kalman_posterior(GaussianSpec::new(0.4, 2.0).unwrap(), 3.0, 1e6).unwrap();
        assert_abs_diff_eq!(post.mean, 0.4, epsilon = 1e-5);
        assert_abs_diff_eq!(post.std, 2.0, epsilon = 1e-5);
        let post = kalman_posterior(GaussianSpec::standard(), 1.0, 0.5).unwrap();
        assert_abs_diff_eq!(post.mean, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(post.variance(), 0.2, epsilon = 1e-15);
        assert!(kalman_posterior(GaussianSpec::standard(), 1.0, 0.0).is_err());
    }

    #[test]
    fn flat_likelihood_reproduces_prior() {
        let gp = std_normal_grid();
        assert_abs_diff_eq!(gp.mean(), 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(gp.variance(), 1.0, epsilon = 1e-4);
        assert!(gp.cdf()[0] <= 1e-6);
        assert!(*gp.cdf().last().unwrap() >= 1.0 - 1e-6);
        assert_abs_diff_eq!(trapezoid(gp.grid(), gp.density()), 1.0, epsilon = 1e-8);
        assert!(gp.cdf().windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn linear_case_matches_kalman() {
        for (y, s) in [(1.0, 1.0), (0.3, 0.6), (-1.5, 0.3)] {
            let lik = linear_likelihood(y, s).unwrap();
            let gp = grid_posterior_gaussian(GaussianSpec::standard(), &lik).unwrap();
            let k = kalman_posterior(GaussianSpec::standard(), y, s).unwrap();
            assert_abs_diff_eq!(gp.mean(), k.mean, epsilon = 1e-6);
            assert_abs_diff_eq!(gp.std(), k.std, epsilon = 1e-6);
        }
    }

    #[test]
    fn quartic_posterior_is_symmetric() {
        let gp = grid_posterior_gaussian(GaussianSpec::standard(), &quartic_likelihood()).unwrap();
        assert_abs_diff_eq!(gp.mean(), 0.0, epsilon = 1e-6);
        let mid = gp.grid().len() / 2;
        // bimodal: density at the origin is below the density at 1.35
        let at = |x: f64| gp.density()[((x - gp.lo()) / (gp.grid()[1] - gp.lo())).round() as usize];
        assert!(at(0.0) < at(1.35));
        assert_abs_diff_eq!(gp.density()[mid - 100], gp.density()[mid + 100], epsilon = 1e-12);
    }

    #[test]
    fn grid_errors() {
        let flat = Likelihood::flat();
        assert!(grid_posterior(|x| -0.5 * x * x, &flat, 1.0, 1.0, 2000).is_err());
        assert!(grid_posterior(|x| -0.5 * x * x, &flat, -8.0, 8.0, 10).is_err());
        assert!(grid_posterior(|x| -0.5 * x * x, &flat, -2.0, 2.0, 2000).is_err());
        let zero = Likelihood::new("zero", |_| f64::NEG_INFINITY);
        assert!(grid_posterior(|x| -0.5 * x * x, &zero, -8.0, 8.0, 2000).is_err());
    }

    #[test]
    fn quantiles() {
        let gp = std_normal_grid();
        assert_eq!(gp.quantile(0.0).unwrap(), -8.0);
        assert_eq!(gp.quantile(1.0).unwrap(), 8.0);
        assert_abs_diff_eq!(gp.quantile(0.5).unwrap(), 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(gp.quantile(0.8413).unwrap(), 1.0, epsilon = 1e-3);
        assert!(gp.quantile(1.2).is_err());
        assert!(gp.quantile(-0.1).is_err());
    }

    #[test]
    fn quantile_inverts_cdf_on_interior() {
        let gp = std_normal_grid();
        let h = gp.grid()[1] - gp.grid()[0];
        for &x in gp.grid().iter().skip(1000).step_by(97).take(20) {
            let back = gp.quantile(gp.cdf_at(x)).unwrap();
            assert!((back - x).abs() <= h, "x={x} back={back}");
        }
    }

    #[test]
    fn w1_single_particle_is_mean_absolute_deviation() {
        let gp = std_normal_grid();
        let med = gp.quantile(0.5).unwrap();
        let set = ParticleSet::equal_weight_1d(&[med]).unwrap();
        let brute = gp.expectation(|x| (x - med).abs());
        let w1 = w1_particles_vs_grid(&set, &gp).unwrap();
        // both sides carry O(h^2) grid error at the kink
        assert_abs_diff_eq!(w1, brute, epsilon = 1e-5);
        assert_abs_diff_eq!(w1, (2.0 / std::f64::consts::PI).sqrt(), epsilon = 1e-5);
    }

    #[test]
    fn w1_decreases_with_count() {
        let gp = std_normal_grid();
        let w: Vec<f64> = [10, 30, 100]
            .iter()
            .map(|&l| w1_particles_vs_grid(&gp.quantile_samples(l).unwrap(), &gp).unwrap())
            .collect();
        assert!(w[0] > w[1] && w[1] > w[2]);
    }

    #[test]
    fn w1_quantile_samples_regression() {
        let gp = std_normal_grid();
        let w1 = w1_particles_vs_grid(&gp.quantile_samples(30).unwrap(), &gp).unwrap();
        assert!((0.02..=0.05).contains(&w1));
        assert_abs_diff_eq!(w1, W1_QUANTILE_30_FROZEN, epsilon = 1e-9);
    }

    // W1 of 30 midpoint-quantile samples against the standard normal grid,
    // recorded from the first evaluation.
    const W1_QUANTILE_30_FROZEN: f64 = 0.047_792_521_793_120_92;

    #[test]
    fn w1_handles_particles_outside_grid() {
        let gp = std_normal_grid();
        let far = ParticleSet::equal_weight_1d(&[20.0]).unwrap();
        let w1 = w1_particles_vs_grid(&far, &gp).unwrap();
        assert_abs_diff_eq!(w1, 20.0, epsilon = 1e-6);
        let two_d = ParticleSet::equal_weight(vec![vec![0.0, 1.0]]).unwrap();
        assert!(w1_particles_vs_grid(&two_d, &gp).is_err());
    }

    #[test]
    fn grid_csv_header() {
        let gp = std_normal_grid();
        let mut buf = Vec::new();
        gp.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,pdf,cdf\n"));
        assert_eq!(text.lines().count(), GRID_POINTS + 1);
    }
}
