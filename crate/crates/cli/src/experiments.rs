//! The four experiment runners and their output files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use driftflow::particles::fmt_full;
use driftflow::{
    cubic_likelihood, deterministic_gaussian_samples, flow_update, grid_posterior_gaussian, kalman_posterior,
    linear_likelihood, quartic_likelihood, random_gaussian_samples, sir_baseline, w1_particles_vs_grid,
    FlowOutcome, GaussianSpec, GridPosterior, Likelihood, ParticleSet,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigRecord, Experiment, ExperimentConfig};
use crate::expr;
use crate::plots;

/// Seeded SIR runs per particle count in the quartic comparison.
pub const SIR_RUNS: u64 = 10;
/// SIR particle counts as multiples of the configured `L`.
pub const SIR_COUNT_FACTORS: [usize; 4] = [1, 2, 4, 10];
/// Points of `map_curve.csv`, spanning the prior mean +- 3 std.
pub const MAP_CURVE_POINTS: usize = 601;
const MAP_CHECK_POINTS: usize = 401;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">")]
    Above,
    #[serde(rename = "==")]
    Equal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: Relation,
    pub limit: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, relation: Relation, limit: f64) -> Self {
        let passed = match relation {
            Relation::AtMost => value <= limit,
            Relation::Above => value > limit,
            Relation::Equal => value == limit,
        };
        Self {
            name: name.into(),
            value,
            relation,
            limit,
            passed,
        }
    }

    /// A yes/no property, stored as 1 (holds) or 0.
    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self::new(name, if ok { 1.0 } else { 0.0 }, Relation::Equal, 1.0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub experiment: Experiment,
    pub config: ConfigRecord,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: Summary,
    pub files: Vec<PathBuf>,
    pub flow: FlowOutcome,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.summary.passed
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.summary.metrics.get(name).copied()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.summary.checks.iter().find(|c| c.name == name)
    }
}

/// One row of `sir_runs.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SirRun {
    pub count: usize,
    pub seed: u64,
    pub w1: f64,
}

/// Runs the configured experiment and writes its outputs.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    match cfg.experiment {
        Experiment::Linear => run_linear(cfg),
        Experiment::Cubic => run_cubic(cfg),
        Experiment::QuarticCompare => run_quartic_compare(cfg),
        Experiment::Custom => run_custom(cfg),
    }
}

pub fn run_linear(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let lik = linear_likelihood(cfg.y_hat, cfg.noise_std)?;
    let kalman = kalman_posterior(cfg.prior, cfg.y_hat, cfg.noise_std)?;
    let prior = cfg.prior;
    let reference = move |x: f64| kalman.mean + kalman.std / prior.std * (x - prior.mean);
    let mut run = FlowRun::execute(cfg, &lik, &reference)?;

    let mean = run.flow.posterior.weighted_mean()[0];
    let std = sample_std(&run.flow.posterior);
    let std_tolerance = if cfg.particle_count <= 10 { 0.25 } else { 0.15 };
    run.metric("kalman_mean", kalman.mean);
    run.metric("kalman_std", kalman.std);
    run.checks.push(Check::new(
        "mean_error",
        (mean - kalman.mean).abs(),
        Relation::AtMost,
        0.1,
    ));
    run.checks.push(Check::new(
        "std_relative_error",
        (std - kalman.std).abs() / kalman.std,
        Relation::AtMost,
        std_tolerance,
    ));
    // the map criterion is stated for L >= 30; coarser sets only report it
    if cfg.particle_count >= 30 {
        let sup = run.metrics["map_sup_error"];
        run.checks
            .push(Check::new("map_sup_error", sup, Relation::AtMost, 0.05));
    }
    run.push_w1_ratio_check();
    run.finish(cfg)
}

pub fn run_cubic(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let lik = cubic_likelihood(cfg.y_hat, cfg.noise_std)?;
    let gp = grid_posterior_gaussian(cfg.prior, &lik)?;
    let reference = quantile_map(&gp, cfg.prior);
    let mut run = FlowRun::execute_with_grid(cfg, &lik, gp.clone(), &reference)?;
    run.push_w1_ratio_check();
    let sup = run.metrics["map_sup_error"];
    run.checks
        .push(Check::new("map_sup_error", sup, Relation::AtMost, 0.1));
    if cfg.y_hat == 0.0 {
        let mean = run.flow.posterior.weighted_mean()[0];
        run.checks.push(Check::new(
            "symmetric_mean_abs",
            mean.abs(),
            Relation::AtMost,
            0.05,
        ));
    }
    run.write_trajectory()?;
    run.finish(cfg)
}

pub fn run_custom(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let source = cfg
        .expr
        .as_deref()
        .context("custom experiment needs an expression")?;
    let parsed = expr::parse(source).with_context(|| format!("in expression {source:?}"))?;
    let lik = Likelihood::new(source, move |x: &[f64]| parsed.eval(x[0]));
    let gp = grid_posterior_gaussian(cfg.prior, &lik)?;
    let reference = quantile_map(&gp, cfg.prior);
    let mut run = FlowRun::execute_with_grid(cfg, &lik, gp.clone(), &reference)?;
    run.push_w1_ratio_check();
    run.finish(cfg)
}

pub fn run_quartic_compare(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let lik = quartic_likelihood();
    let gp = grid_posterior_gaussian(cfg.prior, &lik)?;
    let reference = quantile_map(&gp, cfg.prior);
    let mut run = FlowRun::execute_with_grid(cfg, &lik, gp.clone(), &reference)?;
    let flow_w1 = run.metrics["w1_flow"];

    // a second, independent flow must reproduce the first bit for bit
    let again = flow_update(&run.prior, &lik, &cfg.settings)?;
    let again_w1 = w1_particles_vs_grid(&again.posterior, &gp)?;
    run.checks.push(Check::holds(
        "flow_rerun_identical",
        again_w1.to_bits() == flow_w1.to_bits() && again.posterior == run.flow.posterior,
    ));

    let runs = sir_sweep(cfg, &lik, &gp)?;
    let counts: Vec<usize> = SIR_COUNT_FACTORS.iter().map(|f| f * cfg.particle_count).collect();
    let mut rows = vec![SummaryRow {
        method: "flow",
        count: cfg.particle_count,
        median: flow_w1,
        std: 0.0,
        min: flow_w1,
        max: flow_w1,
    }];
    for &count in &counts {
        let ws: Vec<f64> = runs.iter().filter(|r| r.count == count).map(|r| r.w1).collect();
        rows.push(SummaryRow {
            method: "sir",
            count,
            median: median(&ws),
            std: population_std(&ws),
            min: ws.iter().copied().fold(f64::INFINITY, f64::min),
            max: ws.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
    }
    let sir_rows = &rows[1..];
    for r in sir_rows {
        run.metric(&format!("sir_median_w1_L{}", r.count), r.median);
        run.metric(&format!("sir_std_w1_L{}", r.count), r.std);
        run.checks.push(Check::new(
            format!("sir_std_w1_L{}", r.count),
            r.std,
            Relation::Above,
            0.0,
        ));
    }
    run.checks.push(Check::new(
        "flow_w1_vs_sir_median",
        flow_w1,
        Relation::AtMost,
        sir_rows[0].median,
    ));
    for pair in sir_rows.windows(2) {
        run.checks.push(Check::new(
            format!("sir_median_w1_L{}_vs_L{}", pair[1].count, pair[0].count),
            pair[1].median,
            Relation::AtMost,
            pair[0].median,
        ));
    }

    let mut csv = String::from("L,seed,w1\n");
    for r in &runs {
        csv.push_str(&format!("{},{},{}\n", r.count, r.seed, fmt_full(r.w1)));
    }
    run.write("sir_runs.csv", csv)?;
    let mut csv = String::from("method,L,median_w1,std_w1,min_w1,max_w1\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method,
            r.count,
            fmt_full(r.median),
            fmt_full(r.std),
            fmt_full(r.min),
            fmt_full(r.max)
        ));
    }
    run.write("sir_summary.csv", csv)?;
    let dir = cfg.output_dir.clone();
    run.write("plot_sir.svg", plots::sir_comparison(&dir)?)?;
    run.finish(cfg)
}

struct SummaryRow {
    method: &'static str,
    count: usize,
    median: f64,
    std: f64,
    min: f64,
    max: f64,
}

/// Runs the SIR baseline for every `(L, seed)` pair, in parallel; rows come
/// back sorted by `(L, seed)`.
///
/// Run `s` draws its random prior with seed `2s` and resamples with seed
/// `2s + 1`, so the two streams never coincide.
pub fn sir_sweep(cfg: &ExperimentConfig, lik: &Likelihood, gp: &GridPosterior) -> Result<Vec<SirRun>> {
    let jobs: Vec<(usize, u64)> = SIR_COUNT_FACTORS
        .iter()
        .flat_map(|f| (0..SIR_RUNS).map(move |r| (f * cfg.particle_count, cfg.seed.wrapping_add(r))))
        .collect();
    let mut runs = jobs
        .par_iter()
        .map(|&(count, seed)| -> Result<SirRun> {
            let prior = random_gaussian_samples(cfg.prior, count, seed.wrapping_mul(2))?;
            let post = sir_baseline(&prior, lik, seed.wrapping_mul(2).wrapping_add(1))?;
            Ok(SirRun {
                count,
                seed,
                w1: w1_particles_vs_grid(&post, gp)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by_key(|r| (r.count, r.seed));
    Ok(runs)
}

/// The oracle transport map `F_post^-1 o F_prior`.
fn quantile_map(gp: &GridPosterior, prior: GaussianSpec) -> impl Fn(f64) -> f64 + '_ {
    move |x| gp.quantile(prior.cdf(x)).expect("cdf lies in [0, 1]")
}

struct FlowRun<'a> {
    prior: ParticleSet,
    flow: FlowOutcome,
    grid: GridPosterior,
    metrics: BTreeMap<String, f64>,
    checks: Vec<Check>,
    files: Vec<PathBuf>,
    dir: &'a Path,
}

impl<'a> FlowRun<'a> {
    fn execute(cfg: &'a ExperimentConfig, lik: &Likelihood, reference: &dyn Fn(f64) -> f64) -> Result<Self> {
        let grid = grid_posterior_gaussian(cfg.prior, lik)?;
        Self::execute_with_grid(cfg, lik, grid, reference)
    }

    fn execute_with_grid(
        cfg: &'a ExperimentConfig,
        lik: &Likelihood,
        grid: GridPosterior,
        reference: &dyn Fn(f64) -> f64,
    ) -> Result<Self> {
        fs::create_dir_all(&cfg.output_dir)
            .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
        let prior = deterministic_gaussian_samples(cfg.prior, cfg.particle_count)?;
        let flow = flow_update(&prior, lik, &cfg.settings)?;
        let mut run = FlowRun {
            prior,
            flow,
            grid,
            metrics: BTreeMap::new(),
            checks: Vec::new(),
            files: Vec::new(),
            dir: &cfg.output_dir,
        };
        run.record_fidelity(cfg, reference)?;
        run.record_invariants(cfg)?;
        run.write_common(cfg, reference)?;
        Ok(run)
    }

    fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    fn record_fidelity(&mut self, cfg: &ExperimentConfig, reference: &dyn Fn(f64) -> f64) -> Result<()> {
        let post = &self.flow.posterior;
        let w1 = w1_particles_vs_grid(post, &self.grid)?;
        let baseline = w1_particles_vs_grid(&self.grid.quantile_samples(cfg.particle_count)?, &self.grid)?;
        let (lo, hi) = (cfg.prior.quantile(0.05), cfg.prior.quantile(0.95));
        let mut sup: f64 = 0.0;
        for i in 0..MAP_CHECK_POINTS {
            let x = lo + (hi - lo) * i as f64 / (MAP_CHECK_POINTS - 1) as f64;
            let m = self.flow.chain.compose(&[x])?[0];
            sup = sup.max((m - reference(x)).abs());
        }
        let (mean, std) = (post.weighted_mean()[0], sample_std(post));
        self.metric("posterior_mean", mean);
        self.metric("posterior_std", std);
        self.metric("grid_mean", self.grid.mean());
        self.metric("grid_std", self.grid.std());
        self.metric("w1_flow", w1);
        self.metric("w1_quantile_baseline", baseline);
        self.metric("map_sup_error", sup);
        self.metric("substeps", self.flow.report.k as f64);
        Ok(())
    }

    fn record_invariants(&mut self, cfg: &ExperimentConfig) -> Result<()> {
        let report = &self.flow.report;
        let floor = cfg.settings.ess_floor * cfg.particle_count as f64;
        let mut checks = vec![
            Check::holds("flow_completed", report.completed),
            Check::new(
                "dgamma_sum_error",
                (report.dgamma_sum() - 1.0).abs(),
                Relation::AtMost,
                1e-12,
            ),
            Check::holds(
                "ess_above_floor",
                report
                    .substeps
                    .iter()
                    .all(|s| s.ess_before_resample >= floor || s.degeneration_warning),
            ),
            Check::holds(
                "distance_nonincreasing",
                report
                    .substeps
                    .iter()
                    .all(|s| s.distance_final <= s.distance_initial),
            ),
            Check::holds(
                "bfgs_monotone",
                report.substeps.iter().all(|s| s.monotone_descent),
            ),
        ];
        let composed = self.flow.chain.compose_batch(self.prior.locations_flat())?;
        checks.push(Check::holds(
            "chain_reproduces_posterior",
            composed == self.flow.posterior.locations_flat(),
        ));
        self.checks.extend(checks);
        Ok(())
    }

    fn push_w1_ratio_check(&mut self) {
        let ratio = self.metrics["w1_flow"] / self.metrics["w1_quantile_baseline"];
        self.metric("w1_ratio", ratio);
        self.checks
            .push(Check::new("w1_ratio", ratio, Relation::AtMost, 2.0));
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(path);
        Ok(())
    }

    fn write_common(&mut self, cfg: &ExperimentConfig, reference: &dyn Fn(f64) -> f64) -> Result<()> {
        let mut buf = Vec::new();
        self.prior.write_csv(&mut buf)?;
        self.write("prior.csv", &buf)?;
        let mut buf = Vec::new();
        self.flow.posterior.write_csv(&mut buf)?;
        self.write("posterior.csv", &buf)?;
        let mut buf = Vec::new();
        self.grid.write_csv(&mut buf)?;
        self.write("grid_posterior.csv", &buf)?;
        self.write("map.json", self.flow.chain.to_json()?)?;
        self.write("report.json", self.flow.report.to_json()?)?;

        let (lo, hi) = (
            cfg.prior.mean - 3.0 * cfg.prior.std,
            cfg.prior.mean + 3.0 * cfg.prior.std,
        );
        let mut csv = String::from("x,map,reference\n");
        for i in 0..MAP_CURVE_POINTS {
            let x = lo + (hi - lo) * i as f64 / (MAP_CURVE_POINTS - 1) as f64;
            let m = self.flow.chain.compose(&[x])?[0];
            csv.push_str(&format!(
                "{},{},{}\n",
                fmt_full(x),
                fmt_full(m),
                fmt_full(reference(x))
            ));
        }
        self.write("map_curve.csv", csv)?;

        self.write("plot_particles.svg", plots::particles(self.dir)?)?;
        self.write("plot_cdf.svg", plots::cdf(self.dir)?)?;
        self.write("plot_map.svg", plots::map_curve(self.dir)?)?;
        Ok(())
    }

    /// Particle positions after every sub-step, starting from the prior.
    fn write_trajectory(&mut self) -> Result<()> {
        let mut csv = String::from("step,particle,x\n");
        let mut xs = self.prior.locations_flat().to_vec();
        let dim = self.prior.dim();
        for step in 0..=self.flow.chain.len() {
            if step > 0 {
                xs = self.flow.chain.maps()[step - 1].apply_batch(&xs)?;
            }
            for (i, x) in xs.chunks(dim).enumerate() {
                csv.push_str(&format!("{step},{i},{}\n", fmt_full(x[0])));
            }
        }
        self.write("trajectory.csv", csv)?;
        self.write("plot_flow.svg", plots::trajectory(self.dir)?)?;
        Ok(())
    }

    fn finish(mut self, cfg: &ExperimentConfig) -> Result<RunOutcome> {
        let passed = self.checks.iter().all(|c| c.passed);
        let summary = Summary {
            experiment: cfg.experiment,
            config: cfg.to_record(),
            metrics: std::mem::take(&mut self.metrics),
            checks: std::mem::take(&mut self.checks),
            passed,
            warnings: self.flow.report.warnings.clone(),
        };
        let text = serde_json::to_string_pretty(&summary)? + "\n";
        self.write("summary.json", text)?;
        let mut files = self.files;
        files.sort();
        Ok(RunOutcome {
            summary,
            files,
            flow: self.flow,
        })
    }
}

pub fn sample_std(set: &ParticleSet) -> f64 {
    let m = set.weighted_mean()[0];
    set.locations()
        .zip(set.weights())
        .map(|(x, w)| w * (x[0] - m) * (x[0] - m))
        .sum::<f64>()
        .sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_std() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(population_std(&[1.0, 1.0]), 0.0);
        assert_eq!(population_std(&[0.0, 2.0]), 1.0);
    }

    #[test]
    fn check_relations() {
        assert!(Check::new("a", 1.0, Relation::AtMost, 1.0).passed);
        assert!(!Check::new("a", 0.0, Relation::Above, 0.0).passed);
        assert!(Check::holds("a", true).passed);
        assert!(!Check::holds("a", false).passed);
    }
}
