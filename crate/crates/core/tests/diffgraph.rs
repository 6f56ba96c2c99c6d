use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use msgen::diffgraph::{
    check_gradients, column, losses, minibatch_train, value_and_grad, Activation, Mlp, TrainConfig,
};

fn activation(k: u8) -> Activation {
    match k {
        0 => Activation::Relu,
        1 => Activation::Gelu,
        _ => Activation::Identity,
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn random_mlp_gradients_match_finite_differences(seed in 0u64..10_000, act in 0u8..3, width in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(&[3, width, width, 2], activation(act), Activation::Identity, &mut rng).unwrap();
        let params: Vec<Array2<f64>> = net
            .blocks()
            .into_iter()
            .map(|b| b.mapv(|x| x + 0.1 * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let x = Array2::from_shape_fn((5, 3), |_| rng.sample(StandardNormal));
        let t = Array2::from_shape_fn((5, 2), |_| rng.sample(StandardNormal));
        let w = column(&[0.5, 1.0, 2.0, 0.1, 3.0]);
        let r = check_gradients(&params, 1e-5, |g, vars| {
            let xv = g.input(x.clone());
            let pred = net.forward_graph(g, vars, xv);
            let (tv, wv) = (g.input(t.clone()), g.input(w.clone()));
            losses::weighted_mse(g, pred, tv, wv)
        })
        .unwrap();
        prop_assert!(r.max_relative_error < 1e-4, "{:?}", r);
    }
}

#[test]
fn adam_fits_a_linear_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 400;
    let x = Array2::from_shape_fn((n, 2), |_| rng.sample(StandardNormal));
    let y = Array2::from_shape_fn((n, 1), |(i, _)| 0.5 - 2.0 * x[[i, 0]] + x[[i, 1]]);
    let net = Mlp::new(&[2, 1], Activation::Identity, Activation::Identity, &mut rng).unwrap();
    let mut params = net.blocks();
    let cfg = TrainConfig::new(200, 50, 0.05);
    let trace = minibatch_train(n, &mut params, &cfg, &mut rng, |p, idx, _| {
        let xb = x.select(ndarray::Axis(0), idx);
        let yb = y.select(ndarray::Axis(0), idx);
        value_and_grad(p, |g, vars| {
            let (xv, yv) = (g.input(xb), g.input(yb));
            let pred = net.forward_graph(g, vars, xv);
            let w = g.input(Array2::ones((idx.len(), 1)));
            losses::weighted_mse(g, pred, yv, w)
        })
    })
    .unwrap();
    assert_eq!(trace.len(), 200);
    assert!(trace.last().unwrap() < &1e-6, "{:?}", trace.last());
    assert!((params[0][[0, 0]] + 2.0).abs() < 1e-3);
    assert!((params[0][[1, 0]] - 1.0).abs() < 1e-3);
    assert!((params[1][[0, 0]] - 0.5).abs() < 1e-3);
}

#[test]
fn diverging_training_reports_its_epoch() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = vec![Array2::from_elem((1, 1), 1.0)];
    let cfg = TrainConfig::new(3, 4, 0.1);
    let err = minibatch_train(8, &mut params, &cfg, &mut rng, |p, _, _| {
        value_and_grad(p, |g, vars| {
            let l = g.log(vars[0]);
            let z = g.scale(l, f64::INFINITY);
            g.sum(z)
        })
    })
    .unwrap_err();
    assert!(err.to_string().contains("epoch"), "{err}");
}
