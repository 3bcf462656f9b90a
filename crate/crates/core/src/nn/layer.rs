use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::ops::{self, Dims};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Architecture of a single layer, independent of its weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Dense { inputs: usize, outputs: usize },
    Conv3x3 { in_ch: usize, out_ch: usize },
    Conv1x1 { in_ch: usize, out_ch: usize },
    MaxPool2x2,
    Relu,
    Flatten,
    /// `relu(pool(conv3(relu(conv3(x)))) + conv1(pool(x)))`
    Residual { in_ch: usize, out_ch: usize },
}

impl LayerKind {
    /// One-byte tag used by the checkpoint format.
    pub fn tag(&self) -> u8 {
        match self {
            LayerKind::Dense { .. } => 1,
            LayerKind::Conv3x3 { .. } => 2,
            LayerKind::Conv1x1 { .. } => 3,
            LayerKind::MaxPool2x2 => 4,
            LayerKind::Relu => 5,
            LayerKind::Flatten => 6,
            LayerKind::Residual { .. } => 7,
        }
    }

    /// Shapes of the parameter tensors, in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerKind::Dense { inputs, outputs } => vec![vec![inputs, outputs], vec![outputs]],
            LayerKind::Conv3x3 { in_ch, out_ch } => vec![vec![out_ch, in_ch, 3, 3], vec![out_ch]],
            LayerKind::Conv1x1 { in_ch, out_ch } => vec![vec![out_ch, in_ch, 1, 1], vec![out_ch]],
            LayerKind::Residual { in_ch, out_ch } => vec![
                vec![out_ch, in_ch, 3, 3],
                vec![out_ch],
                vec![out_ch, out_ch, 3, 3],
                vec![out_ch],
                vec![out_ch, in_ch, 1, 1],
                vec![out_ch],
            ],
            LayerKind::MaxPool2x2 | LayerKind::Relu | LayerKind::Flatten => vec![],
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }

    /// Fan-in used for the uniform initialisation bound of each parameter tensor.
    fn fan_ins(&self) -> Vec<usize> {
        match *self {
            LayerKind::Dense { inputs, .. } => vec![inputs, inputs],
            LayerKind::Conv3x3 { in_ch, .. } => vec![in_ch * 9, in_ch * 9],
            LayerKind::Conv1x1 { in_ch, .. } => vec![in_ch, in_ch],
            LayerKind::Residual { in_ch, out_ch } => {
                vec![in_ch * 9, in_ch * 9, out_ch * 9, out_ch * 9, in_ch, in_ch]
            }
            _ => vec![],
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        let chw = |expect_c: usize| -> std::result::Result<(usize, usize, usize), String> {
            match input {
                [c, h, w] if *c == expect_c => Ok((*c, *h, *w)),
                [c, _, _] => Err(format!("expects {expect_c} channels, got {c}")),
                other => Err(format!("expects a (C, H, W) input, got {other:?}")),
            }
        };
        match *self {
            LayerKind::Dense { inputs, outputs } => match input {
                [n] if *n == inputs => Ok(vec![outputs]),
                other => Err(format!("expects a flat input of {inputs}, got {other:?}")),
            },
            LayerKind::Conv3x3 { in_ch, out_ch } | LayerKind::Conv1x1 { in_ch, out_ch } => {
                let (_, h, w) = chw(in_ch)?;
                Ok(vec![out_ch, h, w])
            }
            LayerKind::Residual { in_ch, out_ch } => {
                let (_, h, w) = chw(in_ch)?;
                if h < 2 || w < 2 {
                    return Err(format!("spatial size {h}x{w} too small to pool"));
                }
                Ok(vec![out_ch, h / 2, w / 2])
            }
            LayerKind::MaxPool2x2 => match input {
                [c, h, w] if *h >= 2 && *w >= 2 => Ok(vec![*c, h / 2, w / 2]),
                other => Err(format!("cannot pool {other:?}")),
            },
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Multiply-accumulate count of one forward pass for a single sample.
    pub fn forward_macs(&self, input: &[usize]) -> u64 {
        match (*self, input) {
            (LayerKind::Dense { inputs, outputs }, _) => (inputs * outputs) as u64,
            (LayerKind::Conv3x3 { in_ch, out_ch }, [_, h, w]) => (in_ch * out_ch * 9 * h * w) as u64,
            (LayerKind::Conv1x1 { in_ch, out_ch }, [_, h, w]) => (in_ch * out_ch * h * w) as u64,
            (LayerKind::Residual { in_ch, out_ch }, [_, h, w]) => {
                let full = (h * w) as u64;
                let pooled = ((h / 2) * (w / 2)) as u64;
                (in_ch * out_ch * 9) as u64 * full
                    + (out_ch * out_ch * 9) as u64 * full
                    + (in_ch * out_ch) as u64 * pooled
            }
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T = f32> {
    kind: LayerKind,
    params: Vec<Tensor<T>>,
    trainable: bool,
}

impl<T: Real> Layer<T> {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialisation.
    pub fn init(kind: LayerKind, rng: &mut impl Rng) -> Self {
        let params = kind
            .param_shapes()
            .iter()
            .zip(kind.fan_ins())
            .map(|(shape, fan_in)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| T::from_f64_lossy(dist.sample(rng))).collect();
                Tensor::new(shape.clone(), data).expect("shape matches element count")
            })
            .collect();
        Layer { kind, params, trainable: true }
    }

    pub fn with_params(kind: LayerKind, params: Vec<Tensor<T>>) -> Result<Self> {
        let expected = kind.param_shapes();
        if expected.len() != params.len()
            || expected.iter().zip(&params).any(|(s, p)| s.as_slice() != p.shape())
        {
            return Err(Error::Shape(format!("parameters do not fit {kind:?}")));
        }
        Ok(Layer { kind, params, trainable: true })
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }

    pub fn cast<U: Real>(&self) -> Layer<U> {
        Layer {
            kind: self.kind,
            params: self.params.iter().map(|p| p.cast()).collect(),
            trainable: self.trainable,
        }
    }

    pub(crate) fn forward(&self, x: &Tensor<T>) -> std::result::Result<Tensor<T>, String> {
        let sample = &x.shape()[1..];
        let out_sample = self.kind.output_shape(sample)?;
        let n = x.batch();
        let mut out_shape = vec![n];
        out_shape.extend_from_slice(&out_sample);
        let data = match self.kind {
            LayerKind::Dense { inputs, outputs } => ops::dense_forward(
                x.data(),
                n,
                inputs,
                self.params[0].data(),
                self.params[1].data(),
                outputs,
            ),
            LayerKind::Conv3x3 { out_ch, .. } => {
                ops::conv_forward(x.data(), dims(x), self.params[0].data(), self.params[1].data(), out_ch, 3)
            }
            LayerKind::Conv1x1 { out_ch, .. } => {
                ops::conv_forward(x.data(), dims(x), self.params[0].data(), self.params[1].data(), out_ch, 1)
            }
            LayerKind::MaxPool2x2 => ops::pool_forward(x.data(), dims(x)),
            LayerKind::Relu => ops::relu_forward(x.data()),
            LayerKind::Flatten => x.data().to_vec(),
            LayerKind::Residual { out_ch, .. } => residual_forward(&self.params, x.data(), dims(x), out_ch).output,
        };
        Ok(Tensor::new(out_shape, data).expect("kernel output matches inferred shape"))
    }

    /// Returns parameter gradients (empty when `want_params` is false) and the input gradient.
    pub(crate) fn backward(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        want_params: bool,
    ) -> (Vec<Tensor<T>>, Tensor<T>) {
        let n = x.batch();
        let pack = |dw: Vec<T>, db: Vec<T>| -> Vec<Tensor<T>> {
            if !want_params {
                return vec![];
            }
            let shapes = self.kind.param_shapes();
            vec![
                Tensor::new(shapes[0].clone(), dw).expect("weight grad shape"),
                Tensor::new(shapes[1].clone(), db).expect("bias grad shape"),
            ]
        };
        let (pgrads, dx) = match self.kind {
            LayerKind::Dense { inputs, outputs } => {
                let (dw, db, dx) = ops::dense_backward(
                    x.data(),
                    n,
                    inputs,
                    self.params[0].data(),
                    outputs,
                    dy.data(),
                    want_params,
                );
                (pack(dw, db), dx)
            }
            LayerKind::Conv3x3 { out_ch, .. } | LayerKind::Conv1x1 { out_ch, .. } => {
                let k = if matches!(self.kind, LayerKind::Conv3x3 { .. }) { 3 } else { 1 };
                let (dw, db, dx) =
                    ops::conv_backward(x.data(), dims(x), self.params[0].data(), out_ch, k, dy.data(), want_params);
                (pack(dw, db), dx)
            }
            LayerKind::MaxPool2x2 => (vec![], ops::pool_backward(x.data(), dims(x), dy.data())),
            LayerKind::Relu => (vec![], ops::relu_backward(x.data(), dy.data())),
            LayerKind::Flatten => (vec![], dy.data().to_vec()),
            LayerKind::Residual { out_ch, .. } => {
                residual_backward(&self.params, self.kind, x.data(), dims(x), out_ch, dy.data(), want_params)
            }
        };
        let dx = Tensor::new(x.shape().to_vec(), dx).expect("input grad matches input shape");
        (pgrads, dx)
    }
}

fn dims<T: Real>(x: &Tensor<T>) -> Dims {
    let s = x.shape();
    Dims { n: s[0], c: s[1], h: s[2], w: s[3] }
}

struct ResidualCache<T> {
    h1: Vec<T>,
    r1: Vec<T>,
    h2: Vec<T>,
    sum: Vec<T>,
    pooled_x: Vec<T>,
    output: Vec<T>,
}

fn residual_forward<T: Real>(p: &[Tensor<T>], x: &[T], d: Dims, out_ch: usize) -> ResidualCache<T> {
    let h1 = ops::conv_forward(x, d, p[0].data(), p[1].data(), out_ch, 3);
    let r1 = ops::relu_forward(&h1);
    let dm = Dims { c: out_ch, ..d };
    let h2 = ops::conv_forward(&r1, dm, p[2].data(), p[3].data(), out_ch, 3);
    let main = ops::pool_forward(&h2, dm);
    let pooled_x = ops::pool_forward(x, d);
    let dp = Dims { h: d.h / 2, w: d.w / 2, ..d };
    let skip = ops::conv_forward(&pooled_x, dp, p[4].data(), p[5].data(), out_ch, 1);
    let sum: Vec<T> = main.iter().zip(&skip).map(|(&a, &b)| a + b).collect();
    let output = ops::relu_forward(&sum);
    ResidualCache { h1, r1, h2, sum, pooled_x, output }
}

fn residual_backward<T: Real>(
    p: &[Tensor<T>],
    kind: LayerKind,
    x: &[T],
    d: Dims,
    out_ch: usize,
    dy: &[T],
    want_params: bool,
) -> (Vec<Tensor<T>>, Vec<T>) {
    let cache = residual_forward(p, x, d, out_ch);
    let dsum = ops::relu_backward(&cache.sum, dy);

    let dp = Dims { h: d.h / 2, w: d.w / 2, ..d };
    let (dw_skip, db_skip, dpooled) =
        ops::conv_backward(&cache.pooled_x, dp, p[4].data(), out_ch, 1, &dsum, want_params);
    let dx_skip = ops::pool_backward(x, d, &dpooled);

    let dm = Dims { c: out_ch, ..d };
    let dh2 = ops::pool_backward(&cache.h2, dm, &dsum);
    let (dw2, db2, dr1) = ops::conv_backward(&cache.r1, dm, p[2].data(), out_ch, 3, &dh2, want_params);
    let dh1 = ops::relu_backward(&cache.h1, &dr1);
    let (dw1, db1, mut dx) = ops::conv_backward(x, d, p[0].data(), out_ch, 3, &dh1, want_params);
    for (a, b) in dx.iter_mut().zip(dx_skip) {
        *a += b;
    }

    let grads = if want_params {
        kind.param_shapes()
            .into_iter()
            .zip([dw1, db1, dw2, db2, dw_skip, db_skip])
            .map(|(shape, g)| Tensor::new(shape, g).expect("residual grad shape"))
            .collect()
    } else {
        vec![]
    };
    (grads, dx)
}
