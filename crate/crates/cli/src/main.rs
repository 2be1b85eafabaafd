use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use driftflow_cli::{run, Experiment, ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(
    name = "driftflow",
    version,
    about = "Progressive particle-flow Bayesian updates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Linear Gaussian update, checked against the Kalman posterior
    Linear(Common),
    /// Cubic sensor y = x^3 + v, checked against a quadrature posterior
    Cubic(Common),
    /// Quartic likelihood: flow vs. seeded SIR particle filter runs
    QuarticCompare(Common),
    /// Flow for a user log-likelihood expression in x
    Custom(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of particles
    #[arg(long = "L", value_name = "N")]
    particle_count: Option<usize>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    y_hat: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    prior_mean: Option<f64>,
    #[arg(long)]
    prior_std: Option<f64>,
    /// Minimum ESS/L after each tempered reweight
    #[arg(long)]
    ess_floor: Option<f64>,
    /// Weight of the mean penalty in the distance
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    rbf_count: Option<usize>,
    #[arg(long)]
    min_dgamma: Option<f64>,
    #[arg(long)]
    max_substeps: Option<usize>,
    /// BFGS iteration budget per sub-step
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    grad_tol: Option<f64>,
    /// Base seed of the SIR baseline
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Log-likelihood expression (custom only), e.g. "-(x-1)^2/2"
    #[arg(long, allow_hyphen_values = true)]
    expr: Option<String>,
}

impl Common {
    fn overrides(self) -> anyhow::Result<Overrides> {
        let file = match &self.config {
            Some(path) => Overrides::from_file(path)?,
            None => Overrides::default(),
        };
        let flags = Overrides {
            particle_count: self.particle_count,
            y_hat: self.y_hat,
            noise_std: self.noise_std,
            prior_mean: self.prior_mean,
            prior_std: self.prior_std,
            ess_floor: self.ess_floor,
            c: self.c,
            rbf_count: self.rbf_count,
            min_dgamma: self.min_dgamma,
            max_substeps: self.max_substeps,
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            seed: self.seed,
            out: self.out,
            expr: self.expr,
        };
        Ok(file.merged_with(flags))
    }
}

fn execute(cli: Cli) -> anyhow::Result<bool> {
    let (experiment, common) = match cli.command {
        Command::Linear(c) => (Experiment::Linear, c),
        Command::Cubic(c) => (Experiment::Cubic, c),
        Command::QuarticCompare(c) => (Experiment::QuarticCompare, c),
        Command::Custom(c) => (Experiment::Custom, c),
    };
    let cfg = ExperimentConfig::resolve(experiment, common.overrides()?)?;
    let outcome = run(&cfg)?;
    for w in &outcome.summary.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{experiment}: L = {}, output in {}",
        cfg.particle_count,
        cfg.output_dir.display()
    );
    for c in &outcome.summary.checks {
        let tag = if c.passed { "pass" } else { "FAIL" };
        let rel = serde_json::to_value(c.relation)?;
        println!(
            "  {tag}  {:<34} {:>14.6e} {} {:.6e}",
            c.name,
            c.value,
            rel.as_str().unwrap_or("?"),
            c.limit
        );
    }
    Ok(outcome.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more acceptance thresholds failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
