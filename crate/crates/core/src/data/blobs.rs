use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Class-conditional Gaussian blobs: each class draws a standard-normal template
/// image and every sample is that template plus `sigma`-scaled noise.
///
/// Samples are interleaved by class (`label = i % classes`).
pub fn generate_blobs(
    classes: usize,
    per_class: usize,
    shape: [usize; 3],
    sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes == 0 || per_class == 0 || shape.contains(&0) {
        return Err(Error::Config(format!("blobs: {classes} classes x {per_class}, shape {shape:?}")));
    }
    if !(sigma >= 0.0) {
        return Err(Error::Config(format!("blobs: noise sigma {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let elems: usize = shape.iter().product();
    let templates: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..elems).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * elems);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        for &t in &templates[label] {
            let noise: f64 = StandardNormal.sample(&mut rng);
            data.push((t + sigma * noise) as f32);
        }
        labels.push(label);
    }
    let images = Tensor::new(vec![n, shape[0], shape[1], shape[2]], data)?;
    Dataset::new(images, labels, classes)
}
