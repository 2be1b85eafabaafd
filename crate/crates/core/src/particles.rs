//! Dirac-mixture particle sets.
//!
//! A [`ParticleSet`] holds `L` weighted point masses in `R^D`. Locations are
//! stored row-major in a single buffer, one row of `D` coordinates per
//! particle. Sets are immutable values: every operation returns a new set.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::models::Likelihood;

/// Tolerance used when checking that incoming weights are normalized.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Tempered, normalized weights below this value are set to zero.
pub const WEIGHT_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    dim: usize,
    weights: Vec<f64>,
    locations: Vec<f64>,
}

impl ParticleSet {
    /// Builds a set from explicit weights and locations.
    ///
    /// Weights must be finite and nonnegative; they are stored as given (no
    /// renormalization). Use [`ParticleSet::normalized`] to rescale.
    pub fn new(weights: Vec<f64>, locations: Vec<Vec<f64>>) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::EmptySet);
        }
        if weights.len() != locations.len() {
            return Err(Error::CountMismatch {
                expected: locations.len(),
                found: weights.len(),
            });
        }
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidWeight { index, value });
            }
        }
        let (dim, flat) = flatten(locations)?;
        Ok(Self {
            dim,
            weights,
            locations: flat,
        })
    }

    /// Equal weights `1/L` on the given locations, order preserved.
    pub fn equal_weight(locations: Vec<Vec<f64>>) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::EmptySet);
        }
        let (dim, flat) = flatten(locations)?;
        Ok(Self::equal_weight_flat(dim, flat))
    }

    /// Equal-weight set from a row-major buffer. Panics if the buffer is
    /// empty or not a multiple of `dim`.
    pub(crate) fn equal_weight_flat(dim: usize, locations: Vec<f64>) -> Self {
        assert!(dim > 0 && !locations.is_empty() && locations.len().is_multiple_of(dim));
        let count = locations.len() / dim;
        let w = 1.0 / count as f64;
        Self {
            dim,
            weights: vec![w; count],
            locations,
        }
    }

    /// Scalar convenience constructor for 1-D equal-weight sets.
    pub fn equal_weight_1d(xs: &[f64]) -> Result<Self> {
        Self::equal_weight(xs.iter().map(|&x| vec![x]).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn location(&self, i: usize) -> &[f64] {
        &self.locations[i * self.dim..(i + 1) * self.dim]
    }

    /// Row-major location buffer (`L * D` values).
    pub fn locations_flat(&self) -> &[f64] {
        &self.locations
    }

    pub fn locations(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.locations.chunks_exact(self.dim)
    }

    /// First coordinate of every particle; the natural view for 1-D sets.
    pub fn first_coordinates(&self) -> Vec<f64> {
        self.locations().map(|p| p[0]).collect()
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.weight_sum() - 1.0).abs() <= NORMALIZATION_TOL
    }

    pub(crate) fn ensure_normalized(&self) -> Result<()> {
        if self.is_normalized() {
            Ok(())
        } else {
            Err(Error::Unnormalized {
                sum: self.weight_sum(),
            })
        }
    }

    /// Returns a copy with weights rescaled to sum to one.
    pub fn normalized(&self) -> Result<Self> {
        let sum = self.weight_sum();
        if sum <= 0.0 {
            return Err(Error::TotalDegeneration);
        }
        Ok(Self {
            dim: self.dim,
            weights: normalize(self.weights.iter().map(|w| w / sum).collect()),
            locations: self.locations.clone(),
        })
    }

    /// Same weights, new locations.
    pub fn with_locations_flat(&self, locations: Vec<f64>) -> Result<Self> {
        if locations.len() != self.locations.len() {
            return Err(Error::CountMismatch {
                expected: self.locations.len(),
                found: locations.len(),
            });
        }
        Ok(Self {
            dim: self.dim,
            weights: self.weights.clone(),
            locations,
        })
    }

    /// Bayes update with the likelihood raised to `gamma`.
    ///
    /// Computed in log space: `log w_i + gamma * log f_L(x_i)`, shifted by its
    /// maximum before exponentiation. Locations are untouched.
    pub fn bayes_reweight(&self, lik: &Likelihood, gamma: f64) -> Result<Self> {
        let log_lik = self.log_likelihoods(lik)?;
        self.reweight_with_log_likelihoods(&log_lik, gamma)
    }

    /// Evaluates `log f_L` at every location. `-inf` is allowed; NaN and
    /// `+inf` are rejected.
    pub fn log_likelihoods(&self, lik: &Likelihood) -> Result<Vec<f64>> {
        self.locations()
            .enumerate()
            .map(|(index, x)| {
                let v = lik.log_eval(x);
                if v.is_nan() || v == f64::INFINITY {
                    Err(Error::LikelihoodEvaluation { index, value: v })
                } else {
                    Ok(v)
                }
            })
            .collect()
    }

    /// [`ParticleSet::bayes_reweight`] with precomputed `log f_L` values.
    pub fn reweight_with_log_likelihoods(&self, log_lik: &[f64], gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::invalid("gamma", format!("{gamma} not in (0, 1]")));
        }
        if log_lik.len() != self.len() {
            return Err(Error::CountMismatch {
                expected: self.len(),
                found: log_lik.len(),
            });
        }
        let logs: Vec<f64> = self
            .weights
            .iter()
            .zip(log_lik)
            .map(|(&w, &l)| {
                if w == 0.0 || l == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    w.ln() + gamma * l
                }
            })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::TotalDegeneration);
        }
        let raw: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = raw.iter().sum();
        let weights = raw.into_iter().map(|w| w / sum).collect();
        Ok(Self {
            dim: self.dim,
            weights: normalize(weights),
            locations: self.locations.clone(),
        })
    }

    /// `1 / sum(w_i^2)`.
    pub fn effective_sample_size(&self) -> Result<f64> {
        self.ensure_normalized()?;
        Ok(ess_of(&self.weights))
    }

    /// Componentwise `sum_i w_i x_i`.
    pub fn weighted_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for (w, x) in self.weights.iter().zip(self.locations()) {
            for (m, xd) in mean.iter_mut().zip(x) {
                *m += w * xd;
            }
        }
        mean
    }

    /// Writes the set as CSV with header `w,x1,...,xD`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["w".to_string()];
        header.extend((1..=self.dim).map(|d| format!("x{d}")));
        wtr.write_record(&header)?;
        for (w, x) in self.weights.iter().zip(self.locations()) {
            let mut row = vec![fmt_full(*w)];
            row.extend(x.iter().map(|&v| fmt_full(v)));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads a set written by [`ParticleSet::write_csv`]. Weights are kept
    /// as stored.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("w") || headers.len() < 2 {
            return Err(Error::Format(format!(
                "expected header `w,x1,...`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut weights = Vec::new();
        let mut locations = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let values = record
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Format(format!("`{s}`: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            weights.push(values[0]);
            locations.push(values[1..].to_vec());
        }
        Self::new(weights, locations)
    }
}

pub(crate) fn ess_of(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Formats a float with 17 significant digits.
pub fn fmt_full(v: f64) -> String {
    format!("{v:.16e}")
}

fn normalize(mut weights: Vec<f64>) -> Vec<f64> {
    for w in weights.iter_mut() {
        if *w < WEIGHT_FLOOR {
            *w = 0.0;
        }
    }
    let sum: f64 = weights.iter().sum();
    if sum != 1.0 {
        for w in weights.iter_mut() {
            *w /= sum;
        }
    }
    weights
}

fn flatten(locations: Vec<Vec<f64>>) -> Result<(usize, Vec<f64>)> {
    let dim = locations[0].len();
    if dim == 0 {
        return Err(Error::invalid("dim", "points must have at least one coordinate"));
    }
    let mut flat = Vec::with_capacity(dim * locations.len());
    for p in locations {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.len(),
            });
        }
        flat.extend(p);
    }
    Ok((dim, flat))
}
