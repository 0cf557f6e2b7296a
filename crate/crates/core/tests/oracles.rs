//! Independent reference computations for the likelihood, the samplers'
//! determinism and the spatial model's use of the field.

use mam_core::io::{format_dataset, parse_dataset};
use mam_core::{
    chain_misclassification, misclassification, mixture_log_likelihood, nb_log_pmf, positions_for_seed, run_car_mam,
    run_mam, run_negbinmix, simulate_car_mam, simulate_mam, CarSampler, Dataset, FieldKind, GenerativeParams,
    Hyperparameters, MixingWeights, ModelConfig, ParameterState, SamplerSettings, Scheme, SpatialConfig,
};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Discrete, NegativeBinomial};

/// NB(mean, dispersion) through the (r, p) parameterization.
fn nb_ref(y: u64, mean: f64, phi: f64) -> f64 {
    NegativeBinomial::new(phi, phi / (phi + mean)).unwrap().ln_pmf(y)
}

#[test]
fn nb_density_matches_reference() {
    for &(mu, phi) in &[(0.01, 500.0), (0.7, 1.3), (5.0, 2.0), (30.0, 300.0), (250.0, 40.0)] {
        for y in [0u64, 1, 2, 7, 30, 120, 400] {
            let got = nb_log_pmf(y, mu, phi).unwrap();
            let want = nb_ref(y, mu, phi);
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "y={y} mu={mu} phi={phi}: {got} vs {want}");
        }
    }
}

fn brute_force_loglik(rows: &[Vec<u64>], weights: impl Fn(usize) -> Vec<f64>, mu: &DMatrix<f64>, phi: &DMatrix<f64>, scheme: Scheme) -> f64 {
    let k = mu.nrows();
    let theta_b = 0.01;
    let mut total = 0.0;
    for (j, y) in rows.iter().enumerate() {
        let pi = weights(j);
        let mut lik = 0.0;
        for h in 0..1usize << k {
            let members: Vec<usize> = (0..k).filter(|i| h >> i & 1 == 1).collect();
            let w: f64 = (0..k).map(|i| if h >> i & 1 == 1 { pi[i] } else { 1.0 - pi[i] }).product();
            let mut comp = 1.0;
            for (d, &yd) in y.iter().enumerate() {
                let sel: Vec<f64> = members.iter().map(|&i| mu[(i, d)]).collect();
                let mean = if sel.is_empty() {
                    theta_b
                } else {
                    match scheme {
                        Scheme::Additive => sel.iter().sum(),
                        Scheme::Codominance1 => sel.iter().sum::<f64>() / sel.len() as f64,
                        Scheme::Codominance0 => sel.iter().product::<f64>().powf(1.0 / sel.len() as f64),
                    }
                };
                comp *= nb_ref(yd, mean, phi[(h, d)]).exp();
            }
            lik += w * comp;
        }
        total += lik.ln();
    }
    total
}

#[test]
fn mixture_likelihood_matches_brute_force() {
    let rows = vec![vec![0, 3], vec![14, 2], vec![25, 31], vec![1, 0], vec![8, 9]];
    let mu = DMatrix::from_row_slice(2, 2, &[12.0, 3.0, 4.0, 15.0]);
    let phi = DMatrix::from_fn(4, 2, |h, d| 20.0 + 7.0 * h as f64 + 3.0 * d as f64);
    let data = Dataset::new(rows.clone(), Some(vec![0.0, 1.0, 2.0, 3.0, 4.0]), None).unwrap();
    for scheme in [Scheme::Additive, Scheme::Codominance1, Scheme::Codominance0] {
        let cfg = ModelConfig::new(2, scheme).unwrap();
        let state = ParameterState {
            mu: mu.clone(),
            phi: phi.clone(),
            weights: MixingWeights::Global(vec![0.3, 0.6]),
            s: DMatrix::from_element(5, 2, 1.0),
            z_star: vec![0; 5],
        };
        let want = brute_force_loglik(&rows, |_| vec![0.3, 0.6], &mu, &phi, scheme);
        let got = mixture_log_likelihood(&data, &state, &cfg).unwrap();
        assert!((got - want).abs() < 1e-9, "{scheme}: {got} vs {want}");

        let x = DMatrix::from_fn(2, 5, |i, j| (i as f64 - 0.5) * (j as f64 - 2.0) * 0.4);
        let eta = 0.7;
        let spatial = ParameterState { weights: MixingWeights::Spatial { x: x.clone(), eta }, ..state };
        let logistic = |v: f64| 1.0 / (1.0 + (-v / eta).exp());
        let want = brute_force_loglik(&rows, |j| vec![logistic(x[(0, j)]), logistic(x[(1, j)])], &mu, &phi, scheme);
        let got = mixture_log_likelihood(&data, &spatial, &cfg).unwrap();
        assert!((got - want).abs() < 1e-9, "{scheme} spatial: {got} vs {want}");
    }
}

fn small_settings(seed: u64) -> SamplerSettings {
    SamplerSettings { n_starts: 2, pilot_iters: 10, ..SamplerSettings::new(120, 60, seed) }
}

#[test]
fn chains_are_reproducible() {
    let params = GenerativeParams::new(Scheme::Additive, DMatrix::from_row_slice(2, 2, &[12.0, 3.0, 3.0, 12.0]), 300.0, 0.01).unwrap();
    let data = simulate_mam(150, &params, &[0.5, 0.5], 9).unwrap();
    let cfg = ModelConfig::new(2, Scheme::Additive).unwrap().with_spatial(SpatialConfig { radius: 5000.0, scale: 1000.0, ..Default::default() });
    let hyper = Hyperparameters::default();

    assert_eq!(run_mam(&data, &cfg, &small_settings(3)).unwrap(), run_mam(&data, &cfg, &small_settings(3)).unwrap());
    assert_ne!(run_mam(&data, &cfg, &small_settings(3)).unwrap(), run_mam(&data, &cfg, &small_settings(4)).unwrap());
    assert_eq!(run_car_mam(&data, &cfg, &small_settings(3)).unwrap(), run_car_mam(&data, &cfg, &small_settings(3)).unwrap());
    let nb = |s| run_negbinmix(&data, 4, &hyper, &small_settings(s), Some(0.01)).unwrap();
    assert_eq!(nb(3), nb(3));
}

#[test]
fn simulated_files_round_trip() {
    let params = GenerativeParams::new(Scheme::Codominance0, DMatrix::from_row_slice(2, 2, &[1.6, 1.1, 19.0, 34.0]), 300.0, 0.01).unwrap();
    let pos = positions_for_seed(80, 2);
    let (data, _) = simulate_car_mam(&params, pos, FieldKind::Sine, 0.3, &SpatialConfig::default(), 2).unwrap();
    assert_eq!(parse_dataset(&format_dataset(&data)).unwrap(), data);
}

/// With the field held at the generating values, allocations should beat
/// MAM's global weights on sine-driven data.
#[test]
fn frozen_true_field_beats_global_weights() {
    let params = GenerativeParams::new(
        Scheme::Additive,
        DMatrix::from_row_slice(3, 2, &[10.0, 10.0, 30.0, 30.0, 50.0, 50.0]),
        300.0,
        0.01,
    )
    .unwrap();
    let spatial = SpatialConfig { radius: 50_000.0, scale: 20_000.0, eta_init: 0.3, ..Default::default() };
    let cfg = ModelConfig::new(3, Scheme::Additive).unwrap().with_spatial(spatial);
    let (mut frozen_err, mut mam_err) = (0.0, 0.0);
    for seed in 1..=2 {
        let (data, field) = simulate_car_mam(&params, positions_for_seed(500, seed), FieldKind::Sine, 0.3, &spatial, seed).unwrap();
        let truth = data.truth().unwrap();
        let settings = SamplerSettings::new(1000, 500, seed);

        let mut sampler = CarSampler::new(&data, &cfg, &settings).unwrap();
        sampler.freeze_field(true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = sampler.initial_state(&mut rng).unwrap();
        state.weights = MixingWeights::Spatial { x: field, eta: 0.3 };
        let mut counts = vec![[0usize; 8]; data.n_units()];
        for t in 0..settings.n_iter {
            sampler.set_iteration(t);
            sampler.sweep(&mut state, &mut rng).unwrap();
            if t >= settings.n_burnin {
                for (c, &h) in counts.iter_mut().zip(&state.z_star) {
                    c[h] += 1;
                }
            }
        }
        let map: Vec<usize> = counts.iter().map(|c| (0..8).max_by_key(|&h| (c[h], std::cmp::Reverse(h))).unwrap()).collect();
        frozen_err += misclassification(&map, truth, &cfg.connection()).unwrap();
        mam_err += chain_misclassification(&run_mam(&data, &cfg, &settings).unwrap(), truth).unwrap();
    }
    assert!(frozen_err < mam_err, "frozen field {frozen_err} vs MAM {mam_err}");
}
