use std::collections::BTreeMap;

use proptest::prelude::*;

use msgen::eval::{
    aggregate, argmax_projector, evaluate_all, hotspot_fid, mean_distance, wasserstein1, ComboRecord, EvalOptions,
    MethodSamples, MetricsReport,
};
use msgen::scm::{sample_counterfactual, LinearScm, OracleHorizon, OracleRequest, ScmCoefficients, ScmConfig};

/// Independent W1: replicate both sets to a common size and pair sorted values.
fn w1_by_replication(a: &[f64], b: &[f64]) -> f64 {
    let mut ra: Vec<f64> = a.iter().flat_map(|&v| std::iter::repeat_n(v, b.len())).collect();
    let mut rb: Vec<f64> = b.iter().flat_map(|&v| std::iter::repeat_n(v, a.len())).collect();
    ra.sort_by(f64::total_cmp);
    rb.sort_by(f64::total_cmp);
    ra.iter().zip(&rb).map(|(x, y)| (x - y).abs()).sum::<f64>() / ra.len() as f64
}

fn rows(v: &[f64]) -> Vec<Vec<f64>> {
    v.iter().map(|&x| vec![x]).collect()
}

fn set() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, 1..12)
}

proptest! {
    #[test]
    fn w1_matches_replication_oracle(a in set(), b in set()) {
        let w = wasserstein1(&a, &b).unwrap();
        prop_assert!((w - w1_by_replication(&a, &b)).abs() <= 1e-9 * (1.0 + w));
    }

    #[test]
    fn w1_is_a_metric(a in set(), b in set(), c in set()) {
        let ab = wasserstein1(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(wasserstein1(&a, &a).unwrap(), 0.0);
        prop_assert!((ab - wasserstein1(&b, &a).unwrap()).abs() <= 1e-9 * (1.0 + ab));
        let via = wasserstein1(&a, &c).unwrap() + wasserstein1(&c, &b).unwrap();
        prop_assert!(ab <= via + 1e-9 * (1.0 + via));
    }

    #[test]
    fn w1_is_translation_invariant(a in set(), b in set(), shift in -50.0f64..50.0) {
        let ab = wasserstein1(&a, &b).unwrap();
        let a2: Vec<f64> = a.iter().map(|v| v + shift).collect();
        let b2: Vec<f64> = b.iter().map(|v| v + shift).collect();
        prop_assert!((wasserstein1(&a2, &b2).unwrap() - ab).abs() <= 1e-9 * (1.0 + ab + shift.abs()));
        prop_assert!((wasserstein1(&a2, &a).unwrap() - shift.abs()).abs() <= 1e-9 * (1.0 + shift.abs()));
    }

    #[test]
    fn mean_distance_is_bounded_by_w1(a in set(), b in set()) {
        // |E X − E Y| ≤ E|X − Y| under any coupling, the optimal one included
        let md = mean_distance(&rows(&a), &rows(&b)).unwrap();
        prop_assert!(md <= wasserstein1(&a, &b).unwrap() + 1e-9);
    }

    #[test]
    fn aggregate_is_mean_and_max(values in prop::collection::vec(0.0f64..5.0, 1..10)) {
        let records: Vec<ComboRecord> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| ComboRecord {
                method: "m".into(),
                combo: format!("{i}"),
                n_observed: 1,
                low_support: false,
                available: true,
                mean_dist: None,
                w1: Some(v),
                fid_star: None,
            })
            .collect();
        let agg = aggregate(&records);
        prop_assert_eq!(agg.len(), 1);
        let avg = values.iter().sum::<f64>() / values.len() as f64;
        prop_assert!((agg[0].avg - avg).abs() <= 1e-12 * (1.0 + avg));
        prop_assert_eq!(agg[0].worst, values.iter().copied().fold(f64::MIN, f64::max));
    }
}

#[test]
fn stated_examples() {
    assert_eq!(wasserstein1(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
    let base = [0.3, -1.2, 4.0, 2.5];
    let shifted: Vec<f64> = base.iter().map(|v| v + 0.5).collect();
    assert_eq!(wasserstein1(&shifted, &base).unwrap(), 0.5);
    assert!((mean_distance(&rows(&[0.4, 0.6]), &rows(&[0.7])).unwrap() - 0.2).abs() < 1e-12);

    let mode = |k: usize| if k == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
    let gen: Vec<Vec<f64>> = (0..10).map(|i| mode(usize::from(i >= 6))).collect();
    let orc: Vec<Vec<f64>> = (0..10).map(|i| mode(usize::from(i >= 5))).collect();
    assert!((hotspot_fid(&gen, &orc, argmax_projector).unwrap() - 0.1).abs() < 1e-12);
    let all0 = vec![mode(0); 5];
    let all1 = vec![mode(1); 7];
    assert_eq!(hotspot_fid(&all0, &all1, argmax_projector).unwrap(), 1.0);
    assert!(hotspot_fid(&rows(&[1.0]), &rows(&[2.0]), argmax_projector).is_err());
}

#[test]
fn invalid_sets_are_errors() {
    assert!(wasserstein1(&[], &[1.0]).is_err());
    assert!(wasserstein1(&[f64::NAN], &[1.0]).is_err());
    assert!(mean_distance(&[vec![1.0, 2.0]], &[vec![1.0]]).is_err());
}

#[test]
fn oracle_self_distance_is_small() {
    let cfg = ScmConfig::new(1, 100, 1, 0);
    let scm = LinearScm::new(ScmCoefficients::table4(1).unwrap(), &cfg).unwrap();
    let draws = |seed| {
        let req = OracleRequest {
            seed,
            ..OracleRequest::new(&cfg, OracleHorizon::Pooled)
        };
        sample_counterfactual(&scm, &req, &[1], 10_000).unwrap().into_iter().map(|y| y[0]).collect::<Vec<_>>()
    };
    let w = wasserstein1(&draws(1), &draws(2)).unwrap();
    assert!(w <= 0.02, "{w}");
}

#[test]
fn reports_merge_and_persist() {
    let oracle: BTreeMap<String, Vec<Vec<f64>>> =
        [("0".to_string(), rows(&[0.0, 1.0])), ("1".to_string(), rows(&[2.0, 3.0]))].into();
    let combos = vec!["0".to_string(), "1".to_string()];
    let observed: BTreeMap<String, usize> = [("0".to_string(), 10), ("1".to_string(), 5)].into();
    let mut a = MethodSamples::new();
    a.insert("x".into(), [("0".to_string(), rows(&[0.1, 1.1])), ("1".to_string(), rows(&[2.3, 3.3]))].into());
    let mut b = MethodSamples::new();
    b.insert("y".into(), [("0".to_string(), rows(&[0.0, 1.0]))].into());

    let ra = evaluate_all(&a, &oracle, &combos, &observed, &EvalOptions::default()).unwrap();
    let rb = evaluate_all(&b, &oracle, &combos, &observed, &EvalOptions::default()).unwrap();
    let x = ra.aggregate("x", "w1").unwrap();
    assert!((x.avg - 0.2).abs() < 1e-12 && (x.worst - 0.3).abs() < 1e-12);
    assert!(!rb.record("y", "1").unwrap().available);
    assert_eq!(rb.aggregate("y", "w1").unwrap().n_combos, 1);

    let merged = MetricsReport::merge(&[ra.clone(), rb]);
    assert_eq!(merged.records.len(), 4);
    assert_eq!(merged.aggregate("x", "w1"), ra.aggregate("x", "w1"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    merged.write_json(&path).unwrap();
    assert_eq!(MetricsReport::read_json(&path).unwrap(), merged);
    assert!(MetricsReport::read_json(&dir.path().join("none.json")).is_err());
}
