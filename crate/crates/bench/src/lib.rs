//! Fixtures shared by the benchmarks.

use driftflow::{deterministic_gaussian_samples, linear_likelihood, GaussianSpec, ParticleSet};

/// Equal-weight standard normal particles and their reweighting by a unit
/// Gaussian likelihood at 1, the pair a single linear sub-step compares.
pub fn linear_pair(count: usize) -> (ParticleSet, ParticleSet) {
    let prior = deterministic_gaussian_samples(GaussianSpec::standard(), count).expect("count > 0");
    let lik = linear_likelihood(1.0, 1.0).expect("positive noise");
    let reweighted = prior.bayes_reweight(&lik, 1.0).expect("finite likelihood");
    (prior, reweighted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_shapes() {
        let (x, y) = linear_pair(12);
        assert_eq!(x.len(), 12);
        assert_eq!(y.len(), 12);
        assert!(y.is_normalized());
    }
}
