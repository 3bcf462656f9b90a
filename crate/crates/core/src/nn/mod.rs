//! Layer stacks with exact backpropagation and plain SGD.

pub mod checkpoint;
mod layer;
mod loss;
mod ops;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

pub use layer::{Layer, LayerKind};
pub use loss::softmax_cross_entropy;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

static NEXT_STACK_ID: AtomicU64 = AtomicU64::new(1);

/// An ordered stack of layers evaluated front to back.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequential<T = f32> {
    layers: Vec<Layer<T>>,
    id: u64,
    generation: u64,
}

/// Activations at every layer boundary of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T = f32> {
    activations: Vec<Tensor<T>>,
    stack_id: u64,
    generation: u64,
}

impl<T: Real> ForwardTrace<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.activations.last().expect("trace holds at least the input")
    }

    pub fn into_output(mut self) -> Tensor<T> {
        self.activations.pop().expect("trace holds at least the input")
    }

    pub fn activations(&self) -> &[Tensor<T>] {
        &self.activations
    }
}

#[derive(Clone, Debug)]
pub struct Gradients<T = f32> {
    /// One entry per layer; empty for parameter-free or frozen layers.
    pub params: Vec<Vec<Tensor<T>>>,
    pub input: Tensor<T>,
}

impl<T: Real> Gradients<T> {
    /// Squared L2 norm over all parameter gradients.
    pub fn param_norm_sq(&self) -> f64 {
        self.params.iter().flatten().map(|g| g.sum_sq()).sum()
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        self.params.iter().flatten().flat_map(|g| g.data().iter().map(|v| v.as_f64())).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdState {
    pub learning_rate: f64,
    /// `eta_t = learning_rate / (1 + decay * t)`; zero keeps the rate constant.
    #[serde(default)]
    pub decay: f64,
}

impl SgdState {
    pub fn new(learning_rate: f64) -> Result<Self> {
        Self::with_decay(learning_rate, 0.0)
    }

    pub fn with_decay(learning_rate: f64, decay: f64) -> Result<Self> {
        if !(learning_rate >= 0.0) || !(decay >= 0.0) || !learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate {learning_rate}, decay {decay}")));
        }
        Ok(SgdState { learning_rate, decay })
    }

    pub fn rate_at(&self, round: u32) -> f64 {
        self.learning_rate / (1.0 + self.decay * round as f64)
    }
}

impl<T: Real> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Sequential { layers, id: NEXT_STACK_ID.fetch_add(1, Ordering::Relaxed), generation: 0 }
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<Layer<T>> {
        self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn freeze(&mut self) {
        self.layers.iter_mut().for_each(|l| l.set_trainable(false));
    }

    pub fn is_frozen(&self) -> bool {
        self.layers.iter().all(|l| !l.trainable())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.kind().param_count()).sum()
    }

    pub fn cast<U: Real>(&self) -> Sequential<U> {
        Sequential::new(self.layers.iter().map(|l| l.cast()).collect())
    }

    /// All parameter tensors in layer order.
    pub fn weights(&self) -> Vec<Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params().iter().cloned()).collect()
    }

    pub fn set_weights(&mut self, weights: &[Tensor<T>]) -> Result<()> {
        let expected: usize = self.layers.iter().map(|l| l.params().len()).sum();
        if weights.len() != expected {
            return Err(Error::Shape(format!("{} weight tensors for {expected} slots", weights.len())));
        }
        let mut it = weights.iter();
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                let w = it.next().expect("counted above");
                p.check_same_shape(w)?;
                *p = w.clone();
            }
        }
        self.generation += 1;
        Ok(())
    }

    pub fn flat_weights(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.params().iter())
            .flat_map(|p| p.data().iter().map(|v| v.as_f64()))
            .collect()
    }

    pub fn set_flat_weights(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.layers.iter().flat_map(|l| l.params()).map(|p| p.len()).sum();
        if flat.len() != total {
            return Err(Error::Shape(format!("{} values for {total} weights", flat.len())));
        }
        let mut off = 0;
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                for v in p.data_mut() {
                    *v = T::from_f64_lossy(flat[off]);
                    off += 1;
                }
            }
        }
        self.generation += 1;
        Ok(())
    }

    /// FNV-1a digest of every parameter bit; frozen stacks keep a constant digest.
    pub fn weights_digest(&self) -> u64 {
        let mut h = crate::fnv::Fnv1a::new();
        for layer in &self.layers {
            h.write(&[layer.kind().tag()]);
            for p in layer.params() {
                for v in p.data() {
                    h.write(&v.as_f64().to_bits().to_le_bytes());
                }
            }
        }
        h.finish()
    }

    pub fn forward(&self, batch: &Tensor<T>) -> Result<ForwardTrace<T>> {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(batch.clone());
        for (index, layer) in self.layers.iter().enumerate() {
            let next = layer
                .forward(activations.last().expect("non-empty"))
                .map_err(|reason| Error::Layer { index, reason })?;
            activations.push(next);
        }
        Ok(ForwardTrace { activations, stack_id: self.id, generation: self.generation })
    }

    /// Forward pass that keeps only the output.
    pub fn infer(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut cur = batch.clone();
        for (index, layer) in self.layers.iter().enumerate() {
            cur = layer.forward(&cur).map_err(|reason| Error::Layer { index, reason })?;
        }
        Ok(cur)
    }

    pub fn backward(&self, trace: &ForwardTrace<T>, loss_grad: &Tensor<T>) -> Result<Gradients<T>> {
        if trace.stack_id != self.id || trace.generation != self.generation {
            return Err(Error::StaleTrace(format!(
                "trace from stack {}@{} used on stack {}@{}",
                trace.stack_id, trace.generation, self.id, self.generation
            )));
        }
        if trace.activations.len() != self.layers.len() + 1 {
            return Err(Error::StaleTrace(format!(
                "{} activations for {} layers",
                trace.activations.len(),
                self.layers.len()
            )));
        }
        if trace.output().shape() != loss_grad.shape() {
            return Err(Error::Shape(format!(
                "loss gradient {:?} vs output {:?}",
                loss_grad.shape(),
                trace.output().shape()
            )));
        }
        let mut params = vec![Vec::new(); self.layers.len()];
        let mut grad = loss_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (pg, dx) = layer.backward(&trace.activations[i], &grad, layer.trainable());
            params[i] = pg;
            grad = dx;
        }
        Ok(Gradients { params, input: grad })
    }

    /// `w <- w - eta * g` on trainable layers; frozen layers are left untouched.
    pub fn sgd_step(&mut self, grads: &Gradients<T>, learning_rate: f64) -> Result<()> {
        if grads.params.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "{} gradient groups for {} layers",
                grads.params.len(),
                self.layers.len()
            )));
        }
        for (layer, g) in self.layers.iter().zip(&grads.params) {
            if !layer.trainable() || g.is_empty() {
                continue;
            }
            if g.len() != layer.params().len() {
                return Err(Error::Shape(format!("gradient count mismatch on {:?}", layer.kind())));
            }
            for (p, gp) in layer.params().iter().zip(g) {
                p.check_same_shape(gp)?;
            }
        }
        let eta = T::from_f64_lossy(learning_rate);
        for (layer, g) in self.layers.iter_mut().zip(&grads.params) {
            if !layer.trainable() || g.is_empty() {
                continue;
            }
            for (p, gp) in layer.params_mut().iter_mut().zip(g) {
                for (w, &d) in p.data_mut().iter_mut().zip(gp.data()) {
                    *w -= eta * d;
                }
            }
        }
        self.generation += 1;
        Ok(())
    }
}

/// One SGD step on a batch under softmax cross-entropy; returns the batch loss.
pub fn train_step<T: Real>(
    stack: &mut Sequential<T>,
    batch: &Tensor<T>,
    labels: &[usize],
    learning_rate: f64,
) -> Result<f64> {
    let trace = stack.forward(batch)?;
    let (loss, grad) = softmax_cross_entropy(trace.output(), labels)?;
    let grads = stack.backward(&trace, &grad)?;
    stack.sgd_step(&grads, learning_rate)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn dense(w: f64, inputs: usize, outputs: usize) -> Layer<f64> {
        Layer::with_params(
            LayerKind::Dense { inputs, outputs },
            vec![Tensor::filled(&[inputs, outputs], w), Tensor::zeros(&[outputs])],
        )
        .unwrap()
    }

    #[test]
    fn dense_identity_passes_input_through() {
        let mut eye = Tensor::<f64>::zeros(&[2, 2]);
        eye.data_mut()[0] = 1.0;
        eye.data_mut()[3] = 1.0;
        let layer =
            Layer::with_params(LayerKind::Dense { inputs: 2, outputs: 2 }, vec![eye, Tensor::zeros(&[2])]).unwrap();
        let net = Sequential::new(vec![layer]);
        let x = Tensor::from_f64(&[1, 2], &[3.0, 5.0]).unwrap();
        assert_eq!(net.infer(&x).unwrap().data(), &[3.0, 5.0]);
    }

    #[test]
    fn maxpool_single_block() {
        let net = Sequential::<f64>::new(vec![Layer::init(LayerKind::MaxPool2x2, &mut ChaCha8Rng::seed_from_u64(0))]);
        let x = Tensor::from_f64(&[1, 1, 2, 2], &[1., 2., 3., 4.]).unwrap();
        assert_eq!(net.infer(&x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn conv_center_of_ones() {
        let layer = Layer::with_params(
            LayerKind::Conv3x3 { in_ch: 1, out_ch: 1 },
            vec![Tensor::filled(&[1, 1, 3, 3], 1.0), Tensor::zeros(&[1])],
        )
        .unwrap();
        let net = Sequential::new(vec![layer]);
        let y = net.infer(&Tensor::<f64>::filled(&[1, 1, 3, 3], 1.0)).unwrap();
        assert_eq!(y.data()[4], 9.0);
    }

    #[test]
    fn scalar_chain_rule() {
        let x = 1.75;
        let net = Sequential::new(vec![dense(0.3, 1, 1)]);
        let input = Tensor::from_f64(&[1, 1], &[x]).unwrap();
        let trace = net.forward(&input).unwrap();
        let g = net.backward(&trace, &Tensor::filled(&[1, 1], 1.0)).unwrap();
        assert_eq!(g.params[0][0].data(), &[x]);
        assert_eq!(g.params[0][1].data(), &[1.0]);
        assert_eq!(g.input.data(), &[0.3]);
    }

    #[test]
    fn relu_dead_unit_has_zero_grad() {
        let net = Sequential::<f64>::new(vec![Layer::init(LayerKind::Relu, &mut ChaCha8Rng::seed_from_u64(0))]);
        let x = Tensor::from_f64(&[1, 2], &[-0.5, 0.5]).unwrap();
        let trace = net.forward(&x).unwrap();
        let g = net.backward(&trace, &Tensor::filled(&[1, 2], 1.0)).unwrap();
        assert_eq!(g.input.data(), &[0.0, 1.0]);
    }

    #[test]
    fn sgd_arithmetic_and_freeze() {
        let mut net = Sequential::new(vec![dense(1.0, 1, 1)]);
        let grads = Gradients {
            params: vec![vec![Tensor::filled(&[1, 1], 2.0), Tensor::zeros(&[1])]],
            input: Tensor::zeros(&[1, 1]),
        };
        net.sgd_step(&grads, 0.5).unwrap();
        assert_eq!(net.layers()[0].params()[0].data(), &[0.0]);
        assert_eq!(net.layers()[0].params()[1].data(), &[0.0]);

        let mut frozen = Sequential::new(vec![dense(1.0, 1, 1)]);
        frozen.freeze();
        let before = frozen.weights_digest();
        frozen.sgd_step(&grads, 0.5).unwrap();
        assert_eq!(frozen.weights_digest(), before);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut net = Sequential::new(vec![dense(0.7, 2, 3)]);
        let before = net.weights();
        let grads = Gradients {
            params: vec![vec![Tensor::zeros(&[2, 3]), Tensor::zeros(&[3])]],
            input: Tensor::zeros(&[1, 2]),
        };
        net.sgd_step(&grads, 0.1).unwrap();
        assert_eq!(net.weights(), before);
    }

    #[test]
    fn stale_trace_rejected() {
        let mut net = Sequential::new(vec![dense(0.5, 1, 1)]);
        let x = Tensor::from_f64(&[1, 1], &[1.0]).unwrap();
        let trace = net.forward(&x).unwrap();
        let g = net.backward(&trace, &Tensor::filled(&[1, 1], 1.0)).unwrap();
        net.sgd_step(&g, 0.1).unwrap();
        assert!(matches!(net.backward(&trace, &Tensor::filled(&[1, 1], 1.0)), Err(Error::StaleTrace(_))));

        let other = Sequential::new(vec![dense(0.5, 1, 1)]);
        let t2 = other.forward(&x).unwrap();
        assert!(net.backward(&t2, &Tensor::filled(&[1, 1], 1.0)).is_err());
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Sequential::<f32>::new(vec![
            Layer::init(LayerKind::Conv3x3 { in_ch: 1, out_ch: 2 }, &mut rng),
            Layer::init(LayerKind::Conv3x3 { in_ch: 3, out_ch: 2 }, &mut rng),
        ]);
        let err = net.infer(&Tensor::zeros(&[1, 1, 4, 4])).unwrap_err();
        assert!(matches!(err, Error::Layer { index: 1, .. }), "{err}");
    }

    #[test]
    fn learning_rate_schedule() {
        let s = SgdState::with_decay(0.1, 1.0).unwrap();
        assert_eq!(s.rate_at(0), 0.1);
        assert_eq!(s.rate_at(1), 0.05);
        assert!(SgdState::new(-1.0).is_err());
    }
}
