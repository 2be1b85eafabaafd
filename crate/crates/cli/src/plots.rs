//! Figures built by reading back the CSV files of a run directory, so a
//! plot never shows anything the data files do not contain.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};

use crate::svg::{Figure, Mark, Series};

/// Columns of a numeric CSV file keyed by header; empty cells become NaN.
pub fn read_columns(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        for (k, cell) in record.iter().enumerate() {
            let v = if cell.is_empty() {
                f64::NAN
            } else {
                cell.parse()
                    .with_context(|| format!("{}: row {}: bad number {cell:?}", path.display(), line + 1))?
            };
            cols[k].push(v);
        }
    }
    Ok(headers.into_iter().zip(cols).collect())
}

fn column<'a>(cols: &'a BTreeMap<String, Vec<f64>>, name: &str, path: &Path) -> Result<&'a [f64]> {
    cols.get(name)
        .map(Vec::as_slice)
        .with_context(|| format!("{}: missing column {name}", path.display()))
}

fn pairs(xs: &[f64], ys: &[f64]) -> Vec<(f64, f64)> {
    xs.iter().copied().zip(ys.iter().copied()).collect()
}

/// Prior and posterior particles as weighted stems.
pub fn particles(dir: &Path) -> Result<String> {
    let mut fig = Figure::new("Prior and posterior particles", "x", "weight");
    for (label, file) in [("prior", "prior.csv"), ("posterior", "posterior.csv")] {
        let path = dir.join(file);
        let cols = read_columns(&path)?;
        let pts = pairs(column(&cols, "x1", &path)?, column(&cols, "w", &path)?);
        fig = fig.with(Series::new(label, Mark::Stems, pts));
    }
    Ok(fig.render())
}

/// Quadrature CDF against the empirical CDF of the posterior particles.
pub fn cdf(dir: &Path) -> Result<String> {
    let grid_path = dir.join("grid_posterior.csv");
    let grid = read_columns(&grid_path)?;
    let gx = column(&grid, "x", &grid_path)?;
    let gc = column(&grid, "cdf", &grid_path)?;

    let post_path = dir.join("posterior.csv");
    let post = read_columns(&post_path)?;
    let mut particles = pairs(column(&post, "x1", &post_path)?, column(&post, "w", &post_path)?);
    particles.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut steps = vec![(gx[0], 0.0)];
    let mut acc = 0.0;
    for (x, w) in particles {
        steps.push((x, acc));
        acc += w;
        steps.push((x, acc));
    }
    steps.push((gx[gx.len() - 1], acc));

    Ok(Figure::new("Posterior CDF", "x", "F(x)")
        .with(Series::new("quadrature", Mark::Line, pairs(gx, gc)))
        .with(Series::new("particles", Mark::Line, steps))
        .render())
}

/// Composed flow map against the reference map.
pub fn map_curve(dir: &Path) -> Result<String> {
    let path = dir.join("map_curve.csv");
    let cols = read_columns(&path)?;
    let x = column(&cols, "x", &path)?;
    Ok(Figure::new("Map M(x)", "prior x", "posterior x")
        .with(Series::new(
            "flow",
            Mark::Line,
            pairs(x, column(&cols, "map", &path)?),
        ))
        .with(Series::new(
            "reference",
            Mark::Line,
            pairs(x, column(&cols, "reference", &path)?),
        ))
        .render())
}

/// One polyline per particle through its sub-step positions.
pub fn trajectory(dir: &Path) -> Result<String> {
    let path = dir.join("trajectory.csv");
    let cols = read_columns(&path)?;
    let steps = column(&cols, "step", &path)?;
    let ids = column(&cols, "particle", &path)?;
    let xs = column(&cols, "x", &path)?;
    let mut by_particle: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for ((&s, &i), &x) in steps.iter().zip(ids).zip(xs) {
        by_particle.entry(i as u64).or_default().push((s, x));
    }
    let mut fig = Figure::new("Flow of particles", "sub-step", "x");
    for (i, pts) in by_particle {
        let label = if i == 0 { "particles" } else { "" };
        fig = fig.with(Series::new(label, Mark::Line, pts));
    }
    Ok(fig.render())
}

/// Per-run SIR W1 values by particle count, with the flow as reference.
pub fn sir_comparison(dir: &Path) -> Result<String> {
    let runs_path = dir.join("sir_runs.csv");
    let runs = read_columns(&runs_path)?;
    let sum_path = dir.join("sir_summary.csv");
    let mut rdr =
        csv::Reader::from_path(&sum_path).with_context(|| format!("reading {}", sum_path.display()))?;
    let mut flow = Vec::new();
    let mut medians = Vec::new();
    for record in rdr.records() {
        let r = record?;
        let count: f64 = r[1].parse()?;
        let median: f64 = r[2].parse()?;
        if &r[0] == "flow" {
            flow.push((count, median));
        } else {
            medians.push((count, median));
        }
    }
    let mut fig = Figure::new("W1 to the quadrature posterior", "L", "W1")
        .with(Series::new(
            "SIR runs",
            Mark::Dots,
            pairs(column(&runs, "L", &runs_path)?, column(&runs, "w1", &runs_path)?),
        ))
        .with(Series::new("SIR median", Mark::Line, medians));
    if let Some(&(count, w)) = flow.first() {
        fig = fig.with(Series::new("flow", Mark::Stems, vec![(count, w)]));
    }
    Ok(fig.render())
}
