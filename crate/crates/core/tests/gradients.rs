mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use softmax_warp::trainer::Activation;
use softmax_warp::{batch_loss_grad, parse_warp_pair, LabeledBatch, LossConfig, Point, ProxySet};

#[test]
fn random_configurations_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..200 {
        let case = random_case(&mut rng);
        let err = check_loss_gradients(&case);
        assert!(err < 1e-5, "case {i} ({}, T={}): rel err {err:e}", case.cfg.warp, case.cfg.temperature);
    }
}

#[test]
fn network_gradients_match_finite_differences() {
    for (seed, act, ln) in [
        (1, Activation::Tanh, false),
        (2, Activation::Tanh, true),
        (3, Activation::Relu, false),
        (4, Activation::Relu, true),
    ] {
        let err = check_network_gradients(seed, act, ln);
        assert!(err < 1e-4, "{act:?} ln={ln}: rel err {err:e}");
    }
}

fn coords() -> impl Strategy<Value = f64> {
    -5.0f64..5.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Shifting every embedding and proxy by one vector changes nothing, so
    /// the gradients over all of them sum to zero.
    #[test]
    fn translation_invariance(
        e in prop::collection::vec((coords(), coords()), 1..6),
        p in prop::collection::vec((coords(), coords()), 2..5),
        shift in (coords(), coords()),
        labels_seed in any::<u64>(),
        temperature in 0.3f64..2.0,
    ) {
        let rows: Vec<Vec<f64>> = e.iter().map(|&(a, b)| vec![a, b]).collect();
        let labels: Vec<usize> = (0..rows.len())
            .map(|i| (labels_seed.rotate_left(i as u32) as usize) % p.len())
            .collect();
        let proxies = ProxySet::new(p.iter().map(|&(a, b)| Point::new(vec![a, b]).unwrap()).collect()).unwrap();
        let cfg = LossConfig::new(parse_warp_pair("pwl(1.5, 0.6, 1.4) - t^1.2").unwrap(), temperature).unwrap();

        let base = batch_loss_grad(&LabeledBatch::from_rows(rows.clone(), labels.clone()).unwrap(), &proxies, &cfg).unwrap();
        let by = [shift.0, shift.1];
        let moved_rows: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0] + by[0], r[1] + by[1]]).collect();
        let moved = batch_loss_grad(
            &LabeledBatch::from_rows(moved_rows, labels).unwrap(),
            &proxies.translate(&by),
            &cfg,
        ).unwrap();
        prop_assert!((base.loss - moved.loss).abs() <= 1e-9 * base.loss.abs().max(1.0));

        for k in 0..2 {
            let total: f64 = base.d_embeddings.iter().chain(&base.d_proxies).map(|g| g[k]).sum();
            let scale: f64 = base.d_embeddings.iter().chain(&base.d_proxies).map(|g| g[k].abs()).sum();
            prop_assert!(total.abs() <= 1e-9 * scale.max(1.0), "sum {total}");
        }
    }
}
