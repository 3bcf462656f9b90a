//! Central finite-difference checks of every layer kind in f64.

mod common;

use common::{all_kinds, check_kind, random_tensor, rel_err, worst_error, TOL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfl_core::nn::{softmax_cross_entropy, Layer, LayerKind, Sequential};

#[test]
fn every_layer_kind_matches_finite_differences() {
    for (kind, shape) in all_kinds() {
        let worst = check_kind(kind, &shape, 50);
        assert!(worst <= TOL, "{kind:?}: worst relative error {worst:.3e}");
    }
}

#[test]
fn composite_split_stack_matches_finite_differences() {
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Sequential::new(vec![
            Layer::<f64>::init(LayerKind::Conv3x3 { in_ch: 1, out_ch: 2 }, &mut rng),
            Layer::init(LayerKind::Relu, &mut rng),
            Layer::init(LayerKind::MaxPool2x2, &mut rng),
            Layer::init(LayerKind::Residual { in_ch: 2, out_ch: 2 }, &mut rng),
            Layer::init(LayerKind::Flatten, &mut rng),
            Layer::init(LayerKind::Dense { inputs: 8, outputs: 3 }, &mut rng),
        ]);
        let x = random_tensor(&[2, 1, 8, 8], &mut rng);
        worst = worst.max(worst_error(&net, &x, &mut rng));
    }
    assert!(worst <= TOL, "worst relative error {worst:.3e}");
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let logits = random_tensor(&[3, 4], &mut rng);
        let labels: Vec<usize> = (0..3).map(|_| rng.gen_range(0..4)).collect();
        let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
        for i in 0..logits.len() {
            let h = 1e-6;
            let mut p = logits.clone();
            p.data_mut()[i] += h;
            let up = softmax_cross_entropy(&p, &labels).unwrap().0;
            p.data_mut()[i] -= 2.0 * h;
            let down = softmax_cross_entropy(&p, &labels).unwrap().0;
            let e = rel_err((up - down) / (2.0 * h), g.data()[i]);
            assert!(e <= TOL, "logit {i}: {e:.3e}");
        }
    }
}

#[test]
fn auxiliary_head_gradient_matches_finite_differences() {
    use sfl_core::model::AuxiliaryHead;
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let head = AuxiliaryHead::<f64>::new(&[2, 2, 2], 3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = random_tensor(&[3, 2, 2, 2], &mut rng);
        worst = worst.max(worst_error(&head.stack, &x, &mut rng));
    }
    assert!(worst <= TOL, "worst relative error {worst:.3e}");
}
