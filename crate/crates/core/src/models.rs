//! Likelihood models for the shipped experiments, deterministic Gaussian
//! prior sampling, and the bootstrap particle-filter baseline.

use std::fmt;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf;

use crate::error::{Error, Result};
use crate::particles::ParticleSet;

type LogFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A nonnegative likelihood `f_L(x)` represented by its logarithm, known up
/// to an additive constant. `-inf` marks points where `f_L = 0`.
#[derive(Clone)]
pub struct Likelihood {
    log_fn: Arc<LogFn>,
    descriptor: String,
}

impl Likelihood {
    pub fn new<F>(descriptor: impl Into<String>, log_fn: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            log_fn: Arc::new(log_fn),
            descriptor: descriptor.into(),
        }
    }

    /// Constant likelihood; Bayes with it leaves any prior unchanged.
    pub fn flat() -> Self {
        Self::new("flat", |_| 0.0)
    }

    #[inline]
    pub fn log_eval(&self, x: &[f64]) -> f64 {
        (self.log_fn)(x)
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }
}

impl fmt::Debug for Likelihood {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Likelihood")
            .field("descriptor", &self.descriptor)
            .finish_non_exhaustive()
    }
}

/// Scalar Gaussian `N(x; mean, std)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub mean: f64,
    pub std: f64,
}

impl GaussianSpec {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        check_std("std", std)?;
        if !mean.is_finite() {
            return Err(Error::invalid("mean", "must be finite"));
        }
        Ok(Self { mean, std })
    }

    pub fn standard() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    pub fn variance(&self) -> f64 {
        self.std * self.std
    }

    /// Log density without the normalizing constant.
    pub fn log_density_unnormalized(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.std;
        -0.5 * z * z
    }

    /// Normal CDF.
    pub fn cdf(&self, x: f64) -> f64 {
        0.5 * erf::erfc(-(x - self.mean) / (self.std * std::f64::consts::SQRT_2))
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.mean + self.std * standard_normal_quantile(p)
    }
}

fn check_std(name: &'static str, std: f64) -> Result<()> {
    if std > 0.0 && std.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("{std} must be positive and finite")))
    }
}

/// `y = x + v`, `v ~ N(0, noise_std)`: `log f_L(x) = -(y_hat - x)^2 / (2 noise_std^2)`.
pub fn linear_likelihood(y_hat: f64, noise_std: f64) -> Result<Likelihood> {
    check_std("noise_std", noise_std)?;
    let denom = 2.0 * noise_std * noise_std;
    Ok(Likelihood::new(
        format!("linear(y_hat={y_hat}, noise_std={noise_std})"),
        move |x| {
            let r = y_hat - x[0];
            -(r * r) / denom
        },
    ))
}

/// Cubic sensor `y = x^3 + v`.
pub fn cubic_likelihood(y_hat: f64, noise_std: f64) -> Result<Likelihood> {
    check_std("noise_std", noise_std)?;
    let denom = 2.0 * noise_std * noise_std;
    Ok(Likelihood::new(
        format!("cubic(y_hat={y_hat}, noise_std={noise_std})"),
        move |x| {
            let r = y_hat - x[0] * x[0] * x[0];
            -(r * r) / denom
        },
    ))
}

/// `f_L(x) = exp(-((x-1.2)(x-1.5)(x+1.2)(x+1.5))^2 / 2)`, bimodal under a
/// standard normal prior.
pub fn quartic_likelihood() -> Likelihood {
    Likelihood::new("quartic", |x| {
        let x = x[0];
        // paired roots keep the function exactly even in floating point
        let p = ((x - 1.2) * (x + 1.2)) * ((x - 1.5) * (x + 1.5));
        -0.5 * p * p
    })
}

/// Equal-weight samples at the midpoint quantiles
/// `mean + std * Phi^-1((i - 0.5) / L)`, `i = 1..L`, ascending.
///
/// The grid is mirrored so that the standardized locations are exactly
/// antisymmetric.
pub fn deterministic_gaussian_samples(spec: GaussianSpec, count: usize) -> Result<ParticleSet> {
    if count < 1 {
        return Err(Error::invalid("count", "need at least one sample"));
    }
    check_std("std", spec.std)?;
    let mut z = vec![0.0; count];
    for i in 0..count / 2 {
        let p = (i as f64 + 0.5) / count as f64;
        let q = standard_normal_quantile(p);
        z[i] = q;
        z[count - 1 - i] = -q;
    }
    ParticleSet::equal_weight_1d(&z.iter().map(|&q| spec.mean + spec.std * q).collect::<Vec<_>>())
}

/// Pseudo-random Gaussian draws (ChaCha8 stream seeded with `seed`).
pub fn random_gaussian_samples(spec: GaussianSpec, count: usize, seed: u64) -> Result<ParticleSet> {
    if count < 1 {
        return Err(Error::invalid("count", "need at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..count)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            spec.mean + spec.std * z
        })
        .collect();
    ParticleSet::equal_weight_1d(&xs)
}

/// Standard particle-filter update: one full Bayes reweight followed by `L`
/// multinomial draws with replacement. Output particles sit on prior
/// locations and carry equal weights.
pub fn sir_baseline(prior: &ParticleSet, lik: &Likelihood, seed: u64) -> Result<ParticleSet> {
    let weighted = prior.bayes_reweight(lik, 1.0)?;
    let index = WeightedIndex::new(weighted.weights()).map_err(|_| Error::TotalDegeneration)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = prior.dim();
    let mut flat = Vec::with_capacity(prior.len() * dim);
    for _ in 0..prior.len() {
        flat.extend_from_slice(prior.location(index.sample(&mut rng)));
    }
    Ok(ParticleSet::equal_weight_flat(dim, flat))
}

/// Inverse standard normal CDF, Wichura's AS 241 (PPND16), relative
/// accuracy about 1e-16. Returns `-inf`/`+inf` at 0/1.
pub fn standard_normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&AS241_A, r) / poly1(&AS241_B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-r.ln()).sqrt();
    let value = if r <= 5.0 {
        r -= 1.6;
        poly(&AS241_C, r) / poly1(&AS241_D, r)
    } else {
        r -= 5.0;
        poly(&AS241_E, r) / poly1(&AS241_F, r)
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

// Coefficients from Wichura, "Algorithm AS 241: The percentage points of the
// normal distribution", Applied Statistics 37 (1988). A/B: central region
// |p - 0.5| <= 0.425; C/D: tails with sqrt(-ln p) <= 5; E/F: far tails.
#[allow(clippy::excessive_precision)]
const AS241_A: [f64; 8] = [
    3.387_132_872_796_366_608,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
#[allow(clippy::excessive_precision)]
const AS241_B: [f64; 7] = [
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
#[allow(clippy::excessive_precision)]
const AS241_C: [f64; 8] = [
    1.423_437_110_749_683_577_34,
    4.630_337_846_156_545_295_9,
    5.769_497_221_460_691_405_5,
    3.647_848_324_763_204_605_04,
    1.270_458_252_452_368_382_58,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
#[allow(clippy::excessive_precision)]
const AS241_D: [f64; 7] = [
    2.053_191_626_637_758_821_87,
    1.676_384_830_183_803_849_4,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
#[allow(clippy::excessive_precision)]
const AS241_E: [f64; 8] = [
    6.657_904_643_501_103_777_2,
    5.463_784_911_164_114_369_9,
    1.784_826_539_917_291_335_8,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
#[allow(clippy::excessive_precision)]
const AS241_F: [f64; 7] = [
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

/// `c[0] + c[1] r + ... + c[n-1] r^(n-1)` by Horner.
fn poly(c: &[f64], r: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * r + ci)
}

/// `1 + c[0] r + c[1] r^2 + ...`.
fn poly1(c: &[f64], r: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| (acc + ci) * r) + 1.0
}
