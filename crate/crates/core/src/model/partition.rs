use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::spec::ModelSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, Layer, LayerKind, Sequential};
use crate::tensor::{Real, Tensor};

/// Layer boundary at which a stack is split; the device keeps layers `[0, index)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PartitionPoint(usize);

impl PartitionPoint {
    pub fn new(index: usize, layers: usize) -> Result<Self> {
        if index == 0 || index >= layers {
            return Err(Error::PartitionPoint { point: index, layers });
        }
        Ok(PartitionPoint(index))
    }

    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Device,
    Server,
}

/// One side of a split model, tagged with the architecture it came from.
#[derive(Clone, Debug)]
pub struct ModelHalf<T = f32> {
    pub stack: Sequential<T>,
    pub side: Side,
    pub op_index: usize,
    pub fingerprint: u64,
}

#[derive(Clone, Debug)]
pub struct PartitionedModel<T = f32> {
    pub device: ModelHalf<T>,
    pub server: ModelHalf<T>,
}

impl<T: Real> PartitionedModel<T> {
    /// Device output followed by the server stack, with no quantization in between.
    pub fn infer(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let a = self.device.stack.infer(batch)?;
        self.server.stack.infer(&a)
    }
}

/// Splits a stack at `point`. The device half keeps layers before the point.
pub fn partition<T: Real>(model: Sequential<T>, point: PartitionPoint, fingerprint: u64) -> Result<PartitionedModel<T>> {
    let layers = model.into_layers();
    if point.index() >= layers.len() {
        return Err(Error::PartitionPoint { point: point.index(), layers: layers.len() });
    }
    let mut device = layers;
    let server = device.split_off(point.index());
    let half = |layers, side| ModelHalf {
        stack: Sequential::new(layers),
        side,
        op_index: point.index(),
        fingerprint,
    };
    Ok(PartitionedModel { device: half(device, Side::Device), server: half(server, Side::Server) })
}

/// Rejoins device and server halves into the full layer list.
pub fn concat_weights<T: Real>(device: &ModelHalf<T>, server: &ModelHalf<T>) -> Result<Sequential<T>> {
    if device.side != Side::Device || server.side != Side::Server {
        return Err(Error::IncompatibleHalves("expected a device half and a server half".into()));
    }
    if device.fingerprint != server.fingerprint || device.op_index != server.op_index {
        return Err(Error::IncompatibleHalves(format!(
            "spec {:016x}@{} vs {:016x}@{}",
            device.fingerprint, device.op_index, server.fingerprint, server.op_index
        )));
    }
    if device.stack.len() != device.op_index {
        return Err(Error::IncompatibleHalves(format!(
            "device half has {} layers, offloading point is {}",
            device.stack.len(),
            device.op_index
        )));
    }
    let mut layers: Vec<Layer<T>> = device.stack.layers().to_vec();
    layers.extend_from_slice(server.stack.layers());
    Ok(Sequential::new(layers))
}

impl ModelSpec {
    /// Builds the full model with `seed` and splits it at its offloading point.
    pub fn build_partitioned<T: Real>(&self, seed: u64) -> Result<PartitionedModel<T>> {
        let (model, op) = self.build(seed)?;
        let point = PartitionPoint::new(op, model.len())?;
        partition(model, point, self.fingerprint())
    }
}

/// Single dense layer mapping the flattened device activation to class logits,
/// used only by local-loss training.
#[derive(Clone, Debug)]
pub struct AuxiliaryHead<T = f32> {
    pub stack: Sequential<T>,
}

impl<T: Real> AuxiliaryHead<T> {
    pub fn new(activation_shape: &[usize], num_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = activation_shape.iter().product();
        let mut layers = Vec::new();
        if activation_shape.len() > 1 {
            layers.push(Layer::init(LayerKind::Flatten, &mut rng));
        }
        layers.push(Layer::init(LayerKind::Dense { inputs, outputs: num_classes }, &mut rng));
        AuxiliaryHead { stack: Sequential::new(layers) }
    }

    pub fn param_count(&self) -> usize {
        self.stack.param_count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

/// Centrally trains the full model on the `indices` samples of `data`.
///
/// Returns the trained stack and its offloading point. With `epochs == 0`
/// the stack keeps its seeded random initialisation.
pub fn pretrain(
    spec: &ModelSpec,
    data: &Dataset,
    indices: &[usize],
    opts: PretrainOptions,
) -> Result<(Sequential<f32>, usize)> {
    if indices.is_empty() {
        return Err(Error::EmptyDataset("pre-training set".into()));
    }
    if data.sample_shape() != spec.input_shape {
        return Err(Error::Shape(format!(
            "pre-training images {:?} vs model input {:?}",
            data.sample_shape(),
            spec.input_shape
        )));
    }
    let (mut model, op) = spec.build::<f32>(opts.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x005e_ed0f_9e7a);
    let mut order = indices.to_vec();
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(opts.batch_size.max(1)) {
            let (x, y) = data.batch(chunk)?;
            nn::train_step(&mut model, &x, &y, opts.learning_rate)?;
        }
    }
    Ok((model, op))
}

/// [`pretrain`] followed by a split; returns the frozen device half.
pub fn pretrain_device_side(
    spec: &ModelSpec,
    data: &Dataset,
    indices: &[usize],
    opts: PretrainOptions,
) -> Result<ModelHalf<f32>> {
    let (model, op) = pretrain(spec, data, indices, opts)?;
    let point = PartitionPoint::new(op, model.len())?;
    let mut split = partition(model, point, spec.fingerprint())?;
    split.device.stack.freeze();
    Ok(split.device)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_blobs;

    fn toy_stack() -> Sequential<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Sequential::new(vec![
            Layer::init(LayerKind::Dense { inputs: 2, outputs: 3 }, &mut rng),
            Layer::init(LayerKind::Relu, &mut rng),
            Layer::init(LayerKind::Dense { inputs: 3, outputs: 2 }, &mut rng),
        ])
    }

    #[test]
    fn list_split_at_one() {
        let stack = toy_stack();
        let p = partition(stack.clone(), PartitionPoint::new(1, 3).unwrap(), 1).unwrap();
        assert_eq!(p.device.stack.layers(), &stack.layers()[..1]);
        assert_eq!(p.server.stack.layers(), &stack.layers()[1..]);
    }

    #[test]
    fn split_then_concat_is_identity() {
        let stack = toy_stack();
        let p = partition(stack.clone(), PartitionPoint::new(2, 3).unwrap(), 9).unwrap();
        let back = concat_weights(&p.device, &p.server).unwrap();
        assert_eq!(back.layers(), stack.layers());
    }

    #[test]
    fn out_of_range_points() {
        assert!(PartitionPoint::new(0, 3).is_err());
        assert!(PartitionPoint::new(3, 3).is_err());
        assert!(partition(toy_stack(), PartitionPoint(5), 0).is_err());
    }

    #[test]
    fn incompatible_halves_rejected() {
        let a = ModelSpec::tiny_vgg([1, 8, 8], 2).build_partitioned::<f32>(1).unwrap();
        let b = ModelSpec::tiny_vgg([1, 8, 8], 3).build_partitioned::<f32>(1).unwrap();
        assert!(matches!(concat_weights(&a.device, &b.server), Err(Error::IncompatibleHalves(_))));
        assert!(concat_weights(&a.server, &a.device).is_err());
        assert!(concat_weights(&a.device, &a.server).is_ok());
    }

    #[test]
    fn full_model_equals_composed_halves() {
        let spec = ModelSpec::tiny_res([1, 16, 16], 3);
        let (full, _) = spec.build::<f32>(4).unwrap();
        let split = spec.build_partitioned::<f32>(4).unwrap();
        let data = generate_blobs(3, 2, [1, 16, 16], 0.1, 2).unwrap();
        let direct = full.infer(data.images()).unwrap();
        let composed = split.infer(data.images()).unwrap();
        assert!(direct.bit_eq(&composed));
        let joined = concat_weights(&split.device, &split.server).unwrap();
        assert!(joined.infer(data.images()).unwrap().bit_eq(&direct));
    }

    #[test]
    fn device_output_matches_server_input_across_zoo() {
        for spec in [
            ModelSpec::tiny_vgg([1, 16, 16], 2),
            ModelSpec::tiny_res([3, 16, 16], 4),
            ModelSpec::vgg11([3, 32, 32], 10),
            ModelSpec::resnet9([3, 32, 32], 10),
        ] {
            let plan = spec.plan().unwrap();
            assert_eq!(plan.device().last().unwrap().output, plan.server()[0].input, "{}", spec.name);
        }
    }

    #[test]
    fn zero_epoch_pretrain_is_frozen_random_init() {
        let spec = ModelSpec::tiny_vgg([1, 8, 8], 2);
        let data = generate_blobs(2, 4, [1, 8, 8], 0.1, 0).unwrap();
        let opts = PretrainOptions { epochs: 0, learning_rate: 0.1, batch_size: 4, seed: 11 };
        let all: Vec<usize> = (0..data.len()).collect();
        let half = pretrain_device_side(&spec, &data, &all, opts).unwrap();
        assert!(half.stack.is_frozen());
        let fresh = spec.build_partitioned::<f32>(11).unwrap();
        assert_eq!(half.stack.weights(), fresh.device.stack.weights());

        let trained = pretrain_device_side(&spec, &data, &all, PretrainOptions { epochs: 1, ..opts }).unwrap();
        assert_ne!(trained.stack.weights(), fresh.device.stack.weights());
    }

    #[test]
    fn empty_pretrain_set_rejected() {
        let spec = ModelSpec::tiny_vgg([1, 8, 8], 2);
        let data = generate_blobs(2, 4, [1, 8, 8], 0.1, 0).unwrap();
        let opts = PretrainOptions { epochs: 0, learning_rate: 0.1, batch_size: 4, seed: 1 };
        assert!(matches!(pretrain_device_side(&spec, &data, &[], opts), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn aux_head_shapes() {
        let head = AuxiliaryHead::<f32>::new(&[16, 4, 4], 3, 0);
        assert_eq!(head.param_count(), 256 * 3 + 3);
        let out = head.stack.infer(&Tensor::zeros(&[2, 16, 4, 4])).unwrap();
        assert_eq!(out.shape(), &[2, 3]);
    }
}
