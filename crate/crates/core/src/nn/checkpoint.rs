//! Binary weight checkpoints.
//!
//! Layout, little-endian: `b"SFL1"`, layer count `u32`, then per layer a one
//! byte kind tag followed by each parameter tensor as rank `u32`, dims `u32`
//! each and the raw `f32` payload. Parameter-free layers carry only the tag.

use std::io::{Read, Write};

use super::{Layer, LayerKind, Sequential};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"SFL1";

pub fn write_checkpoint<T: Real, W: Write>(stack: &Sequential<T>, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(stack.len() as u32).to_le_bytes())?;
    for layer in stack.layers() {
        out.write_all(&[layer.kind().tag()])?;
        for p in layer.params() {
            out.write_all(&(p.rank() as u32).to_le_bytes())?;
            for &d in p.shape() {
                out.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in p.data() {
                out.write_all(&(v.as_f64() as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn to_bytes<T: Real>(stack: &Sequential<T>) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(stack, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Sequential<f32>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Record(format!("checkpoint magic {magic:?}")));
    }
    let count = read_u32(&mut input)? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let mut tag = [0u8; 1];
        input.read_exact(&mut tag)?;
        let layer = match tag[0] {
            1 => {
                let [w, b] = read_params::<2, _>(&mut input)?;
                let kind = LayerKind::Dense { inputs: w.shape()[0], outputs: w.shape()[1] };
                Layer::with_params(kind, vec![w, b])?
            }
            2 | 3 => {
                let [w, b] = read_params::<2, _>(&mut input)?;
                let (out_ch, in_ch) = (w.shape()[0], w.shape()[1]);
                let kind = if tag[0] == 2 {
                    LayerKind::Conv3x3 { in_ch, out_ch }
                } else {
                    LayerKind::Conv1x1 { in_ch, out_ch }
                };
                Layer::with_params(kind, vec![w, b])?
            }
            7 => {
                let params = read_params::<6, _>(&mut input)?;
                let (out_ch, in_ch) = (params[0].shape()[0], params[0].shape()[1]);
                Layer::with_params(LayerKind::Residual { in_ch, out_ch }, params.into())?
            }
            4 => Layer::with_params(LayerKind::MaxPool2x2, vec![])?,
            5 => Layer::with_params(LayerKind::Relu, vec![])?,
            6 => Layer::with_params(LayerKind::Flatten, vec![])?,
            other => return Err(Error::Record(format!("unknown layer tag {other}"))),
        };
        layers.push(layer);
    }
    Ok(Sequential::new(layers))
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_params<const N: usize, R: Read>(input: &mut R) -> Result<[Tensor<f32>; N]> {
    let mut out = Vec::with_capacity(N);
    for _ in 0..N {
        let rank = read_u32(input)? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Record(format!("tensor rank {rank}")));
        }
        let shape = (0..rank).map(|_| read_u32(input).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        input.read_exact(&mut raw)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        out.push(Tensor::new(shape, data)?);
    }
    Ok(out.try_into().unwrap_or_else(|_| unreachable!("exactly N tensors read")))
}
