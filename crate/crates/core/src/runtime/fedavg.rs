use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// `W = sum_k (n_k / n) W_k`, elementwise. Accumulates in `f64`.
pub fn fedavg<T: Real>(models: &[Vec<Tensor<T>>], sample_counts: &[usize]) -> Result<Vec<Tensor<T>>> {
    if models.is_empty() || models.len() != sample_counts.len() {
        return Err(Error::Aggregation(format!(
            "{} models with {} sample counts",
            models.len(),
            sample_counts.len()
        )));
    }
    let n: usize = sample_counts.iter().sum();
    if n == 0 {
        return Err(Error::Aggregation("zero total samples".into()));
    }
    let first = &models[0];
    for (k, m) in models.iter().enumerate().skip(1) {
        if m.len() != first.len() || m.iter().zip(first).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::Aggregation(format!("model {k} does not match the shapes of model 0")));
        }
    }
    let total = n as f64;
    Ok(first
        .iter()
        .enumerate()
        .map(|(i, t0)| {
            let mut acc = vec![0f64; t0.len()];
            for (m, &nk) in models.iter().zip(sample_counts) {
                let w = nk as f64;
                for (a, v) in acc.iter_mut().zip(m[i].data()) {
                    *a += w * v.as_f64();
                }
            }
            let data = acc.into_iter().map(|a| T::from_f64_lossy(a / total)).collect();
            Tensor::new(t0.shape().to_vec(), data).expect("shape copied from input")
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn scalar(v: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::from_f64(&[1], &[v]).unwrap()]
    }

    #[test]
    fn weighted_scalars() {
        let w = fedavg(&[scalar(2.0), scalar(6.0)], &[1, 3]).unwrap();
        assert_eq!(w[0].data(), &[5.0]);
    }

    #[test]
    fn guards() {
        assert!(fedavg::<f64>(&[], &[]).is_err());
        assert!(fedavg(&[scalar(1.0)], &[0]).is_err());
        assert!(fedavg(&[scalar(1.0), scalar(1.0)], &[1]).is_err());
        let two = vec![Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap()];
        assert!(matches!(fedavg(&[scalar(1.0), two], &[1, 1]), Err(Error::Aggregation(_))));
    }

    #[test]
    fn single_model_is_identity() {
        let m = vec![Tensor::<f32>::from_f64(&[3], &[0.1, -0.7, 3.3]).unwrap()];
        assert_eq!(fedavg(std::slice::from_ref(&m), &[17]).unwrap(), m);
    }

    proptest! {
        #[test]
        fn identical_inputs_fixed_point(
            vals in proptest::collection::vec(-5.0f32..5.0, 1..16),
            counts in proptest::collection::vec(1usize..500, 1..6),
        ) {
            let m = vec![Tensor::new(vec![vals.len()], vals).unwrap()];
            let models = vec![m.clone(); counts.len()];
            prop_assert_eq!(fedavg(&models, &counts).unwrap(), m);
        }

        #[test]
        fn linear_in_scale(
            a in proptest::collection::vec(-5.0f64..5.0, 4),
            b in proptest::collection::vec(-5.0f64..5.0, 4),
            alpha in -3.0f64..3.0,
            na in 1usize..50, nb in 1usize..50,
        ) {
            let t = |v: &[f64]| vec![Tensor::<f64>::from_f64(&[4], v).unwrap()];
            let scaled = |v: &[f64]| v.iter().map(|x| alpha * x).collect::<Vec<_>>();
            let lhs = fedavg(&[t(&scaled(&a)), t(&scaled(&b))], &[na, nb]).unwrap();
            let rhs = fedavg(&[t(&a), t(&b)], &[na, nb]).unwrap();
            for (l, r) in lhs[0].data().iter().zip(rhs[0].data()) {
                prop_assert!((l - alpha * r).abs() <= 1e-12 * (1.0 + l.abs()));
            }
        }
    }
}
