mod common;

use common::{random_activation, round_trip_excess, ulp};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sfl_core::quant::{dequantize, quantize, QuantizedActivation};
use sfl_core::Tensor;

fn same_grid(a: &QuantizedActivation, b: &QuantizedActivation) -> bool {
    let scale_ok = if a.scale == 0.0 {
        b.scale == 0.0
    } else {
        ((a.scale - b.scale) / a.scale).abs() <= 1e-6
    };
    a.payload == b.payload && a.min_val == b.min_val && scale_ok
}

#[test]
fn round_trip_within_half_step() {
    let excess = round_trip_excess(10_000, 1);
    assert!(excess <= 0.0, "bound exceeded by {excess:e}");
}

#[test]
fn requantizing_grid_values_is_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..10_000 {
        let a = random_activation(&mut rng, trial);
        let z = quantize(&a).unwrap();
        let z2 = quantize(&dequantize(&z).unwrap()).unwrap();
        assert!(same_grid(&z, &z2), "trial {trial}: {:?} vs {:?}", (z.scale, z.min_val), (z2.scale, z2.min_val));
    }
}

#[test]
fn constant_tensor_degenerate_case() {
    for v in [0.0f32, -3.5, 1e-30, 7e4] {
        let a = Tensor::new(vec![5], vec![v; 5]).unwrap();
        let z = quantize(&a).unwrap();
        assert_eq!((z.scale, z.min_val), (0.0, v));
        assert_eq!(dequantize(&z).unwrap(), a);
    }
}

#[test]
fn batch_distance_within_quantization_radius() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 1..500 {
        let a = random_activation(&mut rng, trial);
        let z = quantize(&a).unwrap();
        let d = dequantize(&z).unwrap().l2_distance(&a).unwrap();
        let n = a.len() as f64;
        let slack = n.sqrt() * a.data().iter().map(|v| ulp(*v) as f64).fold(0.0, f64::max);
        assert!(d <= n.sqrt() * z.scale as f64 / 2.0 + slack, "trial {trial}");
    }
}
