mod common;

use common::{finite_difference, random_net, relative_error, rng};
use napts::model::LossKind;
use napts::tensor_ad::{Tape, Tensor};
use proptest::prelude::*;

fn loss_kind(ce: bool) -> LossKind {
    if ce {
        LossKind::SoftmaxCrossEntropy
    } else {
        LossKind::MeanSquaredError
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn reverse_mode_matches_central_differences(seed in any::<u64>(), ce in any::<bool>()) {
        let net = random_net(&mut rng(seed), loss_kind(ce), 300);
        let eval = net.arch.evaluate_with_cache(&net.theta, &net.batch).unwrap();
        let fd = finite_difference(&net.arch, &net.theta, &net.batch, 1e-6);
        for (i, (a, b)) in eval.grad.iter().zip(&fd).enumerate() {
            prop_assert!(relative_error(*a, *b) < 1e-5, "coordinate {}: ad {} fd {}", i, a, b);
        }
    }

    #[test]
    fn cache_gradients_restrict_the_global_gradient(seed in any::<u64>(), ce in any::<bool>()) {
        let net = random_net(&mut rng(seed), loss_kind(ce), 400);
        let eval = net.arch.evaluate_with_cache(&net.theta, &net.batch).unwrap();
        let part = net.arch.partition();
        for d in 0..part.num_subdomains() {
            let theta_d = part.restrict(&net.theta, d).unwrap();
            let local = eval.cache.local_block_gradient(d, &theta_d).unwrap();
            let global = part.restrict(&eval.grad, d).unwrap();
            for (a, b) in local.iter().zip(&global) {
                prop_assert!((a - b).abs() <= 1e-12, "block {}: {} vs {}", d, a, b);
            }
        }
    }

    #[test]
    fn backward_is_linear_in_the_seed(
        x in prop::collection::vec(-2.0f64..2.0, 6),
        w in prop::collection::vec(-2.0f64..2.0, 6),
        a in prop::collection::vec(-1.0f64..1.0, 4),
        b in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::matrix(2, 3, x).unwrap());
        let wv = tape.leaf(Tensor::matrix(3, 2, w).unwrap());
        let h = tape.matmul(xv, wv).unwrap();
        let y = tape.tanh(h);
        let seed = |v: Vec<f64>| Tensor::matrix(2, 2, v).unwrap();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p + q).collect();
        let ga = tape.backward(y, seed(a)).unwrap().wrt(wv, &[3, 2]);
        let gb = tape.backward(y, seed(b)).unwrap().wrt(wv, &[3, 2]);
        let gs = tape.backward(y, seed(sum)).unwrap().wrt(wv, &[3, 2]);
        for ((p, q), s) in ga.data().iter().zip(gb.data()).zip(gs.data()) {
            prop_assert!((p + q - s).abs() <= 1e-12 * (1.0 + s.abs()));
        }
    }
}

#[test]
fn twenty_mixed_networks_both_losses() {
    let mut r = rng(2024);
    for i in 0..20 {
        let loss = loss_kind(i % 2 == 0);
        let net = random_net(&mut r, loss, 500);
        assert!(net.arch.param_count() <= 500);
        let eval = net.arch.evaluate_with_cache(&net.theta, &net.batch).unwrap();
        let fd = finite_difference(&net.arch, &net.theta, &net.batch, 1e-6);
        let worst = eval
            .grad
            .iter()
            .zip(&fd)
            .map(|(a, b)| relative_error(*a, *b))
            .fold(0.0, f64::max);
        assert!(worst < 1e-5, "net {i}: worst relative error {worst}");
    }
}

#[test]
fn gradient_evaluation_is_bitwise_deterministic() {
    let net = random_net(&mut rng(7), LossKind::SoftmaxCrossEntropy, 500);
    let a = net.arch.evaluate_with_cache(&net.theta, &net.batch).unwrap();
    let b = net.arch.evaluate_with_cache(&net.theta, &net.batch).unwrap();
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    let bits = |g: &[f64]| g.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.grad), bits(&b.grad));
}
