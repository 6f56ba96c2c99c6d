use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use msgen::diffgraph::TrainConfig;
use msgen::propensity::{
    compute_all_iptw, fit_propensity, oracle_iptw, PropensityConfig, PropensityModel,
};
use msgen::scm::{simulate_dataset, windowize, LinearScm, ScmCoefficients, ScmConfig, WindowSample};

fn one_step(i: usize, a: u8, x: f64) -> WindowSample {
    WindowSample {
        y: vec![0.0],
        a_window: vec![a],
        x_window: vec![x],
        v: None,
        a_lead: vec![],
        x_lead: vec![],
        trajectory: i,
        time: 0,
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[test]
fn constant_assignment_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples: Vec<WindowSample> = (0..20_000)
        .map(|i| one_step(i, u8::from(rng.random::<f64>() < 0.7), rng.random()))
        .collect();
    let model = fit_propensity(&samples, &PropensityConfig::default()).unwrap();
    for x in [0.05, 0.5, 0.95] {
        let p = model.step_probability(&one_step(0, 0, x), 0).unwrap();
        assert!((p - 0.7).abs() < 0.02, "x={x}: {p}");
    }
}

#[test]
fn separable_assignment_is_learned() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let samples: Vec<WindowSample> = (0..5000)
        .map(|i| {
            let x: f64 = rng.random();
            one_step(i, u8::from(x > 0.5), x)
        })
        .collect();
    let cfg = PropensityConfig {
        train: TrainConfig::new(60, 128, 1e-2),
        ..Default::default()
    };
    let model = fit_propensity(&samples, &cfg).unwrap();
    let ce = model.cross_entropy(&samples).unwrap();
    assert!(ce < 0.1, "{ce}");
}

#[test]
fn oracle_weights_follow_logistic_assignment() {
    let cfg = ScmConfig::new(1, 10, 1, 0);
    let scm = LinearScm::new(ScmCoefficients::table4(1).unwrap(), &cfg).unwrap();
    // β = (-0.5, 0.5): P(A=1 | x=0) = σ(-0.5)
    let treated = oracle_iptw(&scm, &one_step(0, 1, 0.0));
    let control = oracle_iptw(&scm, &one_step(0, 0, 0.0));
    assert!((treated - 1.0 / sigmoid(-0.5)).abs() < 1e-12);
    assert!((treated - 2.6487).abs() < 1e-4);
    assert!((control - 1.0 / sigmoid(0.5)).abs() < 1e-12);
    assert!((control - 1.6065).abs() < 1e-4);
}

#[test]
fn weights_depend_only_on_treatments_without_confounding() {
    let mut coeffs = ScmCoefficients::table4(3).unwrap();
    for k in 3..6 {
        coeffs.beta[k] = 0.0;
    }
    let cfg = ScmConfig::new(3, 15, 40, 3);
    let scm = LinearScm::new(coeffs, &cfg).unwrap();
    let windows = windowize(&simulate_dataset(&scm, &cfg).unwrap(), 3).unwrap();
    let mut by_history = std::collections::BTreeMap::new();
    for w in &windows {
        let mut key = w.a_lead.clone();
        key.extend_from_slice(&w.a_window);
        let weight = oracle_iptw(&scm, w);
        let first = *by_history.entry(key).or_insert(weight);
        assert!((weight - first).abs() < 1e-9 * first);
    }
}

#[test]
fn fitted_weights_track_oracle_weights() {
    let cfg = ScmConfig::new(1, 20, 2000, 7);
    let scm = LinearScm::new(ScmCoefficients::table4(1).unwrap(), &cfg).unwrap();
    let windows = windowize(&simulate_dataset(&scm, &cfg).unwrap(), 1).unwrap();
    let model = fit_propensity(&windows, &PropensityConfig::default()).unwrap();
    let fitted = compute_all_iptw(&model, &windows).unwrap();
    let mut rel: Vec<f64> = windows
        .iter()
        .zip(&fitted)
        .map(|(w, f)| (f / oracle_iptw(&scm, w) - 1.0).abs())
        .collect();
    rel.sort_by(f64::total_cmp);
    let median = rel[rel.len() / 2];
    assert!(median < 0.05, "median relative difference {median}");
}

#[test]
fn checkpoint_round_trip_preserves_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let samples: Vec<WindowSample> = (0..500)
        .map(|i| one_step(i, rng.random_range(0..2), rng.random()))
        .collect();
    let cfg = PropensityConfig {
        train: TrainConfig::new(2, 64, 1e-3),
        ..Default::default()
    };
    let model = fit_propensity(&samples, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("propensity.json");
    model.save(&path).unwrap();
    let back = PropensityModel::load(&path).unwrap();
    for s in samples.iter().take(50) {
        assert_eq!(model.step_probability(s, 0).unwrap(), back.step_probability(s, 0).unwrap());
    }
}

#[test]
fn mismatched_window_lengths_are_rejected() {
    let mut samples = vec![one_step(0, 1, 0.2), one_step(1, 0, 0.4)];
    samples[1].a_window.push(1);
    assert!(fit_propensity(&samples, &PropensityConfig::default()).is_err());
    assert!(fit_propensity(&[], &PropensityConfig::default()).is_err());
}
