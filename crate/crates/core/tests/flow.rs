use driftflow::{
    cubic_likelihood, cvm_terms, deterministic_gaussian_samples, flow_update, grid_posterior_gaussian,
    kalman_posterior, linear_likelihood, minimize, quartic_likelihood, w1_particles_vs_grid, BfgsSettings,
    CvmConfig, GaussianSpec, Likelihood, MapChain, ParticleSet, ProgressionSettings, RbfMap,
};

fn prior(count: usize) -> ParticleSet {
    deterministic_gaussian_samples(GaussianSpec::standard(), count).unwrap()
}

fn sample_std(set: &ParticleSet) -> f64 {
    let m = set.weighted_mean()[0];
    set.first_coordinates()
        .iter()
        .zip(set.weights())
        .map(|(x, w)| w * (x - m) * (x - m))
        .sum::<f64>()
        .sqrt()
}

#[test]
fn linear_flow_tracks_kalman() {
    for noise in [1.0, 0.6, 0.3] {
        let lik = linear_likelihood(1.0, noise).unwrap();
        let out = flow_update(&prior(30), &lik, &ProgressionSettings::default()).unwrap();
        let k = kalman_posterior(GaussianSpec::standard(), 1.0, noise).unwrap();
        let mean = out.posterior.weighted_mean()[0];
        let std = sample_std(&out.posterior);
        assert!((mean - k.mean).abs() <= 0.1, "noise {noise}: mean {mean}");
        assert!((std - k.std).abs() <= 0.15 * k.std, "noise {noise}: std {std}");
        assert!(out.report.completed);
        assert!((out.report.dgamma_sum() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn report_invariants_hold_on_all_models() {
    let settings = ProgressionSettings::default();
    for lik in [
        linear_likelihood(1.0, 0.3).unwrap(),
        cubic_likelihood(1.0, 0.6).unwrap(),
        quartic_likelihood(),
    ] {
        let p = prior(50);
        let out = flow_update(&p, &lik, &settings).unwrap();
        let r = &out.report;
        assert!(r.completed);
        assert!(!r.has_degeneration_warning());
        assert_eq!(r.k, r.substeps.len());
        assert_eq!(r.cumulative_gamma, 1.0);
        assert!((r.dgamma_sum() - 1.0).abs() <= 1e-12);
        for s in &r.substeps {
            assert!(s.ess_before_resample >= settings.ess_floor * 50.0);
            assert!(s.distance_final <= s.distance_initial);
            assert!(s.monotone_descent);
        }
        assert!(out.posterior.weights().iter().all(|&w| w == 1.0 / 50.0));
        let composed = out.chain.compose_batch(p.locations_flat()).unwrap();
        assert_eq!(composed, out.posterior.locations_flat());
    }
}

#[test]
fn flow_is_deterministic() {
    let lik = cubic_likelihood(1.0, 0.6).unwrap();
    let a = flow_update(&prior(40), &lik, &ProgressionSettings::default()).unwrap();
    let b = flow_update(&prior(40), &lik, &ProgressionSettings::default()).unwrap();
    assert_eq!(a.posterior, b.posterior);
    assert_eq!(a.chain.to_json().unwrap(), b.chain.to_json().unwrap());
    assert_eq!(a.report.to_json().unwrap(), b.report.to_json().unwrap());
}

#[test]
fn flat_likelihood_returns_prior() {
    let p = prior(25);
    let out = flow_update(&p, &Likelihood::flat(), &ProgressionSettings::default()).unwrap();
    assert_eq!(out.posterior.locations_flat(), p.locations_flat());
    assert_eq!(out.report.k, 1);
}

#[test]
fn spike_likelihood_completes_with_warning() {
    let p = prior(20);
    let target = p.location(7)[0];
    let lik = Likelihood::new("spike", move |x| -1e6 * (x[0] - target).powi(2));
    let out = flow_update(&p, &lik, &ProgressionSettings::default()).unwrap();
    assert!(out.report.has_degeneration_warning());
    assert!(out.posterior.locations_flat().iter().all(|v| v.is_finite()));
    for s in &out.report.substeps {
        assert!(s.distance_final <= s.distance_initial);
    }
}

#[test]
fn dropping_dyy_does_not_move_the_optimum() {
    let p = prior(15);
    let reference = p
        .bayes_reweight(&linear_likelihood(0.5, 1.0).unwrap(), 1.0)
        .unwrap();
    let base = RbfMap::identity_on(&p, 3).unwrap();
    let fit = |include_dyy: bool| {
        let cfg = CvmConfig {
            include_dyy,
            ..CvmConfig::default()
        };
        let objective = |theta: &[f64]| {
            let map = base.with_params(theta).unwrap();
            let cand = p
                .with_locations_flat(map.apply_batch(p.locations_flat()).unwrap())
                .unwrap();
            let (v, up) = driftflow::cvm_value_and_gradient(&cand, &reference, &cfg).unwrap();
            (v, map.param_gradient(p.locations_flat(), &up).unwrap())
        };
        minimize(objective, &base.params(), &BfgsSettings::default()).unwrap()
    };
    let with = fit(true);
    let without = fit(false);
    let d_yy = cvm_terms(&reference, &reference, &CvmConfig::default())
        .unwrap()
        .d_xx;
    assert!((with.value - (without.value + d_yy)).abs() <= 1e-8);
    for (a, b) in with.argmin.iter().zip(&without.argmin) {
        assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
    }
}

#[test]
fn upsampled_midpoints_stay_between_neighbors() {
    let p = prior(30);
    let out = flow_update(
        &p,
        &linear_likelihood(1.0, 1.0).unwrap(),
        &ProgressionSettings::default(),
    )
    .unwrap();
    let xs = p.first_coordinates();
    let mids: Vec<Vec<f64>> = xs.windows(2).map(|w| vec![0.5 * (w[0] + w[1])]).collect();
    let mapped = out.chain.upsample(&mids).unwrap();
    let post = out.posterior.first_coordinates();
    for (i, m) in mapped.iter().enumerate() {
        if post[i] < post[i + 1] {
            assert!(post[i] < m[0] && m[0] < post[i + 1], "midpoint {i}");
        }
    }
}

#[test]
fn chain_survives_json_round_trip() {
    let p = prior(20);
    let out = flow_update(
        &p,
        &cubic_likelihood(1.0, 0.6).unwrap(),
        &ProgressionSettings::default(),
    )
    .unwrap();
    let back = MapChain::from_json(&out.chain.to_json().unwrap()).unwrap();
    assert_eq!(
        back.compose_batch(p.locations_flat()).unwrap(),
        out.posterior.locations_flat()
    );
}

#[test]
fn cubic_flow_is_close_to_quadrature() {
    let spec = GaussianSpec::standard();
    let lik = cubic_likelihood(1.0, 0.6).unwrap();
    let gp = grid_posterior_gaussian(spec, &lik).unwrap();
    let out = flow_update(&prior(50), &lik, &ProgressionSettings::default()).unwrap();
    let flow = w1_particles_vs_grid(&out.posterior, &gp).unwrap();
    let baseline = w1_particles_vs_grid(&gp.quantile_samples(50).unwrap(), &gp).unwrap();
    assert!(flow <= 2.0 * baseline, "{flow} vs {baseline}");
}

#[test]
fn symmetric_cubic_posterior_is_centered() {
    let lik = cubic_likelihood(0.0, 0.6).unwrap();
    let out = flow_update(&prior(50), &lik, &ProgressionSettings::default()).unwrap();
    assert!(out.posterior.weighted_mean()[0].abs() <= 0.05);
}
