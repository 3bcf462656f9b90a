use rand::Rng;

use crate::tensor::{Real, Tensor};

/// Mirrors each image of an `(N, C, H, W)` batch along the width axis with probability `p`.
pub fn augment_hflip<T: Real>(batch: &Tensor<T>, p: f64, rng: &mut impl Rng) -> Tensor<T> {
    let s = batch.shape();
    let (n, w) = (s[0], s[3]);
    let per = batch.len() / n;
    let mut out = batch.clone();
    for i in 0..n {
        // one draw per image regardless of p keeps the stream aligned across settings
        let u: f64 = rng.gen();
        if u < p {
            for row in out.data_mut()[i * per..(i + 1) * per].chunks_mut(w) {
                row.reverse();
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn probe() -> Tensor<f32> {
        Tensor::from_f64(&[1, 1, 2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap()
    }

    #[test]
    fn p_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(augment_hflip(&probe(), 0.0, &mut rng), probe());
    }

    #[test]
    fn p_one_mirrors_and_is_an_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let once = augment_hflip(&probe(), 1.0, &mut rng);
        assert_eq!(once.data(), &[3., 2., 1., 6., 5., 4.]);
        assert_eq!(augment_hflip(&once, 1.0, &mut rng), probe());
    }
}
