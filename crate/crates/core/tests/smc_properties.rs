use mppt_lab::smc::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

proptest! {
    #[test]
    fn weights_stay_normalized(
        particles in prop::collection::vec(-50.0f64..250.0, 2..64),
        raw in prop::collection::vec(0.01f64..1.0, 64),
        y in -50.0f64..250.0,
        sigma_v in 0.05f64..20.0,
    ) {
        let n = particles.len();
        let total: f64 = raw[..n].iter().sum();
        let weights = raw[..n].iter().map(|w| w / total).collect();
        let mut ps = ParticleSet::new(particles, weights).unwrap();
        let params = SmcParams { n_particles: n, n_thr: n as f64 / 2.0, ..SmcParams::new(0.1, sigma_v, 0.0, 1.0) };
        update_weights(&mut ps, y, &params);
        prop_assert!((ps.weight_sum() - 1.0).abs() < 1e-12);
        prop_assert!(ps.weights.iter().all(|&w| w >= 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        resample_if_needed(&mut ps, &params, &mut rng);
        prop_assert!((ps.weight_sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_importance_ratio_matches_likelihood_update(
        seed in any::<u64>(),
        slope in -20.0f64..20.0,
        u in -5.0f64..5.0,
        y in 90.0f64..110.0,
    ) {
        let params = SmcParams { n_particles: 32, n_thr: 16.0, ..SmcParams::new(0.5, 1.5, 100.0, 3.0) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prev = init_particles(&params, &mut rng).unwrap();
        let inputs = TransitionInputs { slope_est: slope, u, v_egmpp: 98.0 };
        let mut simple = prev.clone();
        propagate(&mut simple, &inputs, &params, &mut rng);

        // w ∝ w_prev · p(y|x) p(x|x_prev) / q(x|x_prev, y) with q = p(x|x_prev)
        let raw: Vec<f64> = prev
            .particles
            .iter()
            .zip(&simple.particles)
            .zip(&prev.weights)
            .map(|((&xp, &x), &w)| {
                let trans = normal_pdf(x, transition_mean(xp, &inputs, &params), params.sigma_w);
                w * normal_pdf(y, x, params.sigma_v) * trans / trans
            })
            .collect();
        let total: f64 = raw.iter().sum();
        update_weights(&mut simple, y, &params);
        for (a, b) in raw.iter().zip(&simple.weights) {
            prop_assert!((a / total - b).abs() < 1e-12);
        }
    }
}

#[test]
fn prior_sample_mean_within_three_standard_errors() {
    let params = SmcParams::new(0.03, 0.003, 120.0, 4.0);
    let bound = 3.0 * params.sigma0 / (params.n_particles as f64).sqrt();
    let mut outside = 0;
    for seed in 0..200 {
        let ps = init_particles(&params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mean = ps.particles.iter().sum::<f64>() / ps.len() as f64;
        if (mean - params.v0).abs() > bound {
            outside += 1;
        }
    }
    // expected fraction outside is 0.27%
    assert!(outside <= 3, "{outside} of 200 outside");
}

#[test]
fn systematic_resampling_is_unbiased() {
    let weights = [0.05, 0.4, 0.15, 0.3, 0.1];
    let n = weights.len();
    let trials = 1000;
    let mut counts = [0usize; 5];
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..trials {
        for j in systematic_indices(&weights, &mut rng) {
            counts[j] += 1;
        }
    }
    for (j, &w) in weights.iter().enumerate() {
        let expected = trials as f64 * n as f64 * w;
        let rel = (counts[j] as f64 - expected).abs() / expected;
        assert!(rel < 0.10, "particle {j}: {} vs {expected}", counts[j]);
    }
}

/// Error of the filter estimate after `steps` updates with a static true voltage.
fn static_truth_error(params: &SmcParams, truth: f64, steps: usize, seed: u64) -> f64 {
    use rand_distr::{Distribution, Normal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.sigma_v).unwrap();
    let mut ps = init_particles(params, &mut rng).unwrap();
    let inputs = TransitionInputs {
        slope_est: 0.0,
        u: 0.0,
        v_egmpp: truth,
    };
    let mut est = f64::NAN;
    for _ in 0..steps {
        propagate(&mut ps, &inputs, params, &mut rng);
        update_weights(&mut ps, truth + noise.sample(&mut rng), params);
        est = estimate(&ps);
        resample_if_needed(&mut ps, params, &mut rng);
    }
    est - truth
}

#[test]
fn static_truth_rmse_below_measurement_noise() {
    // process noise matched to the measurement noise
    let params = SmcParams::new(0.01, 0.01, 99.0, 1.0);
    let sse: f64 = (0..100)
        .map(|s| static_truth_error(&params, 100.0, 50, s).powi(2))
        .sum();
    let rmse = (sse / 100.0).sqrt();
    assert!(rmse < params.sigma_v, "rmse {rmse}");
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    let params = SmcParams::new(0.03, 0.003, 50.0, 1.0);
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = init_particles(&params, &mut rng).unwrap();
        let mut out = Vec::new();
        for k in 0..20 {
            let inputs = TransitionInputs {
                slope_est: 2.0 - 0.1 * k as f64,
                u: 0.0,
                v_egmpp: 55.0,
            };
            propagate(&mut ps, &inputs, &params, &mut rng);
            update_weights(&mut ps, 50.0 + 0.01 * k as f64, &params);
            resample_if_needed(&mut ps, &params, &mut rng);
            out.extend(ps.particles.iter().map(|v| v.to_bits()));
        }
        out
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}
