use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    if logits.rank() != 2 || logits.batch() != labels.len() {
        return Err(Error::Shape(format!(
            "logits {:?} with {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let n = labels.len();
    let classes = logits.shape()[1];
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelRange { label, classes });
    }
    let mut grad = Vec::with_capacity(logits.len());
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for (row, &label) in logits.data().chunks(classes).zip(labels) {
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() - (row[label].as_f64() - max);
        for (j, e) in exps.iter().enumerate() {
            let p = e / z;
            let target = if j == label { 1.0 } else { 0.0 };
            grad.push(T::from_f64_lossy((p - target) * inv_n));
        }
    }
    Ok((loss * inv_n, Tensor::new(logits.shape().to_vec(), grad)?))
}
