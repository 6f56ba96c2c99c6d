use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use msgen::baselines::{kde_fit, train_msm_nn, MsmConfig};
use msgen::propensity::oracle_iptw;
use msgen::scm::{all_combos, simulate_dataset, windowize, LinearScm, ScmCoefficients, ScmConfig, WindowSample};

fn sample(i: usize, a: &[u8], y: f64) -> WindowSample {
    WindowSample {
        y: vec![y],
        a_window: a.to_vec(),
        x_window: vec![0.0; a.len()],
        v: None,
        a_lead: vec![0; a.len() - 1],
        x_lead: vec![0.0; a.len() - 1],
        trajectory: i,
        time: 0,
    }
}

#[test]
fn weighted_kde_sample_mean_matches_mixture_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<WindowSample> = (0..300).map(|i| sample(i, &[1], rng.random_range(-2.0..3.0))).collect();
    let weights: Vec<f64> = (0..300).map(|_| rng.random_range(0.1..5.0)).collect();
    let h = 0.4;
    let kde = kde_fit(&data, Some(&weights), h).unwrap();

    let total: f64 = weights.iter().sum();
    let mu: f64 = data.iter().zip(&weights).map(|(s, w)| w * s.y[0]).sum::<f64>() / total;
    let var: f64 = data.iter().zip(&weights).map(|(s, w)| w * (s.y[0] - mu).powi(2)).sum::<f64>() / total + h * h;

    let n = 100_000;
    let draws = kde.sample("1", n, 7).unwrap();
    let mean = draws.iter().map(|y| y[0]).sum::<f64>() / n as f64;
    assert!((mean - mu).abs() < 3.0 * (var / n as f64).sqrt(), "{mean} vs {mu}");
    assert_eq!(draws[..50], kde.sample("1", 50, 7).unwrap()[..]);
}

#[test]
fn weighted_kde_density_integrates_to_one() {
    let data = vec![sample(0, &[0], -1.0), sample(1, &[0], 0.5), sample(2, &[0], 4.0)];
    let kde = kde_fit(&data, Some(&[0.2, 3.0, 1.0]), 0.3).unwrap();
    let step = 1e-3;
    let area: f64 = (0..12_000).map(|k| kde.density("0", &[-4.0 + k as f64 * step]).unwrap() * step).sum();
    assert!((area - 1.0).abs() < 1e-3, "{area}");
}

#[test]
fn noise_free_unconfounded_outcome_is_regressed() {
    // y = 1 + 2 a_oldest - a_newest with no covariates involved
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data: Vec<WindowSample> = (0..2000)
        .map(|i| {
            let a = [rng.random_range(0..2u8), rng.random_range(0..2u8)];
            sample(i, &a, 1.0 + 2.0 * f64::from(a[0]) - f64::from(a[1]))
        })
        .collect();
    let msm = train_msm_nn(&data, &vec![1.0; data.len()], &MsmConfig::default()).unwrap();
    for a in all_combos(2) {
        let truth = 1.0 + 2.0 * f64::from(a[0]) - f64::from(a[1]);
        let pred = msm.predict(&a, None).unwrap()[0];
        assert!((pred - truth).abs() < 0.05, "{a:?}: {pred} vs {truth}");
    }
}

#[test]
fn constant_outcome_is_predicted_everywhere() {
    let data: Vec<WindowSample> = (0..64).map(|i| sample(i, &[(i % 2) as u8, (i / 2 % 2) as u8], 2.5)).collect();
    let msm = train_msm_nn(&data, &vec![1.0; 64], &MsmConfig::default()).unwrap();
    for a in all_combos(2) {
        let pred = msm.predict(&a, None).unwrap()[0];
        assert!((pred - 2.5).abs() < 1e-3, "{pred}");
    }
}

#[test]
fn weighted_msm_recovers_d1_counterfactual_means() {
    let cfg = ScmConfig::new(1, 50, 1000, 21);
    let scm = LinearScm::new(ScmCoefficients::table4(1).unwrap(), &cfg).unwrap();
    let windows = windowize(&simulate_dataset(&scm, &cfg).unwrap(), 1).unwrap();
    let weights: Vec<f64> = windows.iter().map(|w| oracle_iptw(&scm, w)).collect();
    let msm = train_msm_nn(&windows, &weights, &MsmConfig::default()).unwrap();
    let m0 = msm.predict(&[0], None).unwrap()[0];
    let m1 = msm.predict(&[1], None).unwrap()[0];
    assert!((m0 + 3.0).abs() < 0.15, "{m0}");
    assert!((m1 + 1.0).abs() < 0.15, "{m1}");
}

#[test]
fn msm_rejects_mismatched_weights() {
    let data = vec![sample(0, &[1], 0.0), sample(1, &[0], 1.0)];
    assert!(train_msm_nn(&data, &[1.0], &MsmConfig::default()).is_err());
}
