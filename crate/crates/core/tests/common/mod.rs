//! Helpers shared by the integration and acceptance suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfl_core::nn::{Layer, LayerKind, Sequential};
use sfl_core::quant::{dequantize, quantize, Quantization};
use sfl_core::runtime::{DatasetConfig, Mode, RunConfig};
use sfl_core::Tensor;

pub const TOL: f64 = 1e-4;

pub fn rel_err(num: f64, ana: f64) -> f64 {
    (num - ana).abs() / num.abs().max(ana.abs()).max(1e-7)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_f64(shape, &v).unwrap()
}

/// `sum(r * net(x))`, whose gradient with respect to the output is `r`.
fn projected(net: &Sequential<f64>, x: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    net.infer(x).unwrap().data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Worst relative error over every parameter and input coordinate.
///
/// A coordinate is retried with a smaller step before being reported, since a
/// step that straddles a ReLU or max-pool switch point is not a gradient bug.
pub fn worst_error(net: &Sequential<f64>, x: &Tensor<f64>, rng: &mut ChaCha8Rng) -> f64 {
    let out_shape = net.infer(x).unwrap().shape().to_vec();
    let r = random_tensor(&out_shape, rng);
    let trace = net.forward(x).unwrap();
    let grads = net.backward(&trace, &r).unwrap();
    let analytic = grads.flatten_params();
    let w0 = net.flat_weights();
    let mut worst = 0.0f64;

    let numeric_param = |i: usize, h: f64| {
        let mut n = net.clone();
        let mut w = w0.clone();
        w[i] = w0[i] + h;
        n.set_flat_weights(&w).unwrap();
        let up = projected(&n, x, &r);
        w[i] = w0[i] - h;
        n.set_flat_weights(&w).unwrap();
        (up - projected(&n, x, &r)) / (2.0 * h)
    };
    for (i, &a) in analytic.iter().enumerate() {
        let mut e = rel_err(numeric_param(i, 1e-6), a);
        if e > TOL {
            e = e.min(rel_err(numeric_param(i, 1e-8), a));
        }
        worst = worst.max(e);
    }

    let numeric_input = |i: usize, h: f64| {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let up = projected(net, &xp, &r);
        xp.data_mut()[i] -= 2.0 * h;
        (up - projected(net, &xp, &r)) / (2.0 * h)
    };
    for (i, &a) in grads.input.data().iter().enumerate() {
        let mut e = rel_err(numeric_input(i, 1e-6), a);
        if e > TOL {
            e = e.min(rel_err(numeric_input(i, 1e-8), a));
        }
        worst = worst.max(e);
    }
    worst
}

pub fn check_kind(kind: LayerKind, input: &[usize], instances: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + kind_salt(kind));
        let net = Sequential::new(vec![Layer::<f64>::init(kind, &mut rng)]);
        let x = random_tensor(input, &mut rng);
        worst = worst.max(worst_error(&net, &x, &mut rng));
    }
    worst
}

fn kind_salt(kind: LayerKind) -> u64 {
    match kind {
        LayerKind::Dense { .. } => 1,
        LayerKind::Conv3x3 { .. } => 2,
        LayerKind::Conv1x1 { .. } => 3,
        LayerKind::MaxPool2x2 => 4,
        LayerKind::Relu => 5,
        LayerKind::Flatten => 6,
        LayerKind::Residual { .. } => 7,
    }
}

/// Every layer kind with a small input shape, batch of two.
pub fn all_kinds() -> Vec<(LayerKind, Vec<usize>)> {
    vec![
        (LayerKind::Dense { inputs: 5, outputs: 3 }, vec![2, 5]),
        (LayerKind::Conv3x3 { in_ch: 2, out_ch: 3 }, vec![2, 2, 5, 4]),
        (LayerKind::Conv1x1 { in_ch: 3, out_ch: 2 }, vec![2, 3, 4, 4]),
        (LayerKind::MaxPool2x2, vec![2, 2, 4, 6]),
        (LayerKind::Relu, vec![2, 3, 3, 3]),
        (LayerKind::Flatten, vec![2, 2, 3, 3]),
        (LayerKind::Residual { in_ch: 2, out_ch: 3 }, vec![2, 2, 4, 4]),
    ]
}

/// Desk-scale reference setting: 2-class blobs at noise 0.05, four devices, TinyVGG.
pub fn desk_config(mode: Mode, rounds: u32) -> RunConfig {
    RunConfig {
        mode,
        devices: 4,
        rounds,
        rho: 1,
        learning_rate: 0.05,
        batch_size: 16,
        pretrain_epochs: 1,
        quantization: Quantization::Affine8,
        dataset: DatasetConfig::Blobs { classes: 2, per_class: 200, shape: [3, 16, 16], sigma: 0.05, seed: None },
        seed: 7,
        ..RunConfig::smoke(mode)
    }
}

pub fn ulp(x: f32) -> f32 {
    let x = x.abs();
    f32::from_bits(x.to_bits() + 1) - x
}

/// Tensors with varied size, offset and spread; every tenth one is constant.
pub fn random_activation(rng: &mut ChaCha8Rng, trial: usize) -> Tensor<f32> {
    let n = rng.gen_range(1..200);
    let center: f32 = rng.gen_range(-1e3..1e3) * if rng.gen_bool(0.5) { 1e-3 } else { 1.0 };
    let spread: f32 = 10f32.powf(rng.gen_range(-4.0..3.0));
    let data: Vec<f32> = if trial.is_multiple_of(10) {
        vec![center; n]
    } else {
        (0..n).map(|_| center + spread * rng.gen_range(-1.0f32..1.0)).collect()
    };
    Tensor::new(vec![n], data).unwrap()
}

/// Worst `|a_hat - a| - (scale/2 + ulp)` over the trials; non-positive means within bound.
pub fn round_trip_excess(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for trial in 0..trials {
        let a = random_activation(&mut rng, trial);
        let z = quantize(&a).unwrap();
        let back = dequantize(&z).unwrap();
        for (&x, &y) in a.data().iter().zip(back.data()) {
            let bound = z.scale as f64 / 2.0 + ulp(x.abs().max(y.abs())) as f64;
            worst = worst.max((x as f64 - y as f64).abs() - bound);
        }
    }
    worst
}
