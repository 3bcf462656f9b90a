//! Per-tensor 8-bit affine quantization of activations and the activation
//! record wire format.
//!
//! Quantized records (`QACT`), little-endian:
//!
//! ```text
//! magic "QACT" | round_tag u32 | device_id u16 | batch_index u32 | rank u8 |
//! dims u32 * rank | scale f32 | min f32 | label count u32 | labels u16 * n |
//! payload u8 * elements
//! ```
//!
//! Unquantized records (`RACT`) use the same layout without `scale` and `min`
//! and carry an `f32` payload.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, Sequential};
use crate::tensor::Tensor;

pub const QACT_MAGIC: &[u8; 4] = b"QACT";
pub const RACT_MAGIC: &[u8; 4] = b"RACT";

/// Whether activations pass through the 8-bit compressor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantization {
    #[default]
    Affine8,
    Off,
}

/// Provenance carried by every transmitted or cached activation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RecordMeta {
    pub round_tag: u32,
    pub device_id: u16,
    pub batch_index: u32,
    pub labels: Vec<u16>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedActivation {
    pub shape: Vec<usize>,
    pub scale: f32,
    pub min_val: f32,
    pub payload: Vec<u8>,
    pub meta: RecordMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawActivation {
    pub values: Tensor<f32>,
    pub meta: RecordMeta,
}

/// A cached or transmitted activation, compressed or not.
#[derive(Clone, Debug, PartialEq)]
pub enum ActivationRecord {
    Quantized(QuantizedActivation),
    Raw(RawActivation),
}

/// `q = round((a - min) / scale)` with `scale = (max - min) / 255`.
///
/// A constant tensor yields `scale = 0`, an all-zero payload and
/// `min_val` equal to the constant.
pub fn quantize(a: &Tensor<f32>) -> Result<QuantizedActivation> {
    quantize_with(a, RecordMeta::default())
}

pub fn quantize_with(a: &Tensor<f32>, meta: RecordMeta) -> Result<QuantizedActivation> {
    if !a.is_finite() {
        return Err(Error::NonFinite);
    }
    let (lo, hi) = a
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let scale = ((hi as f64 - lo as f64) / 255.0) as f32;
    let payload = if scale > 0.0 {
        let (min, s) = (lo as f64, scale as f64);
        a.data()
            .iter()
            .map(|&v| ((v as f64 - min) / s).round().clamp(0.0, 255.0) as u8)
            .collect()
    } else {
        vec![0; a.len()]
    };
    Ok(QuantizedActivation { shape: a.shape().to_vec(), scale, min_val: lo, payload, meta })
}

/// `a_i = min_val + scale * q_i`.
pub fn dequantize(z: &QuantizedActivation) -> Result<Tensor<f32>> {
    let n: usize = z.shape.iter().product();
    if n != z.payload.len() {
        return Err(Error::Record(format!("payload of {} bytes for shape {:?}", z.payload.len(), z.shape)));
    }
    if !(z.scale >= 0.0) || !z.scale.is_finite() || !z.min_val.is_finite() {
        return Err(Error::Record(format!("scale {} min {}", z.scale, z.min_val)));
    }
    let (min, s) = (z.min_val as f64, z.scale as f64);
    let data = z.payload.iter().map(|&q| (min + s * q as f64) as f32).collect();
    Tensor::new(z.shape.clone(), data)
}

/// Applies the compressor selected by `mode`.
pub fn compress(a: &Tensor<f32>, meta: RecordMeta, mode: Quantization) -> Result<ActivationRecord> {
    match mode {
        Quantization::Affine8 => Ok(ActivationRecord::Quantized(quantize_with(a, meta)?)),
        Quantization::Off => {
            if !a.is_finite() {
                return Err(Error::NonFinite);
            }
            Ok(ActivationRecord::Raw(RawActivation { values: a.clone(), meta }))
        }
    }
}

/// Header bytes of a `QACT` record, labels excluded.
pub fn qact_header_len(rank: usize) -> usize {
    4 + 4 + 2 + 4 + 1 + 4 * rank + 4 + 4 + 4
}

/// Header bytes of a `RACT` record, labels excluded.
pub fn ract_header_len(rank: usize) -> usize {
    4 + 4 + 2 + 4 + 1 + 4 * rank + 4
}

/// Bytes of one label on the wire.
pub const LABEL_BYTES: usize = 2;

impl ActivationRecord {
    pub fn meta(&self) -> &RecordMeta {
        match self {
            ActivationRecord::Quantized(q) => &q.meta,
            ActivationRecord::Raw(r) => &r.meta,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            ActivationRecord::Quantized(q) => &q.shape,
            ActivationRecord::Raw(r) => r.values.shape(),
        }
    }

    pub fn elements(&self) -> usize {
        self.shape().iter().product()
    }

    /// Decompressed activation.
    pub fn to_tensor(&self) -> Result<Tensor<f32>> {
        match self {
            ActivationRecord::Quantized(q) => dequantize(q),
            ActivationRecord::Raw(r) => Ok(r.values.clone()),
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        self.meta().labels.iter().map(|&l| l as usize).collect()
    }

    /// Length of the serialized record.
    pub fn serialized_len(&self) -> usize {
        let meta = self.meta();
        let labels = LABEL_BYTES * meta.labels.len();
        match self {
            ActivationRecord::Quantized(q) => qact_header_len(q.shape.len()) + labels + q.payload.len(),
            ActivationRecord::Raw(r) => ract_header_len(r.values.rank()) + labels + 4 * r.values.len(),
        }
    }

    /// Activation bytes charged to the uplink, labels excluded.
    ///
    /// Quantized transfers are charged the whole `QACT` record less its labels;
    /// raw transfers are charged `4` bytes per element, like any other
    /// full-precision tensor exchanged between device and server.
    pub fn wire_activation_bytes(&self) -> usize {
        match self {
            ActivationRecord::Quantized(q) => qact_header_len(q.shape.len()) + q.payload.len(),
            ActivationRecord::Raw(r) => 4 * r.values.len(),
        }
    }

    pub fn wire_label_bytes(&self) -> usize {
        LABEL_BYTES * self.meta().labels.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        let meta = self.meta();
        out.extend_from_slice(match self {
            ActivationRecord::Quantized(_) => QACT_MAGIC,
            ActivationRecord::Raw(_) => RACT_MAGIC,
        });
        out.extend_from_slice(&meta.round_tag.to_le_bytes());
        out.extend_from_slice(&meta.device_id.to_le_bytes());
        out.extend_from_slice(&meta.batch_index.to_le_bytes());
        let shape = self.shape();
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        if let ActivationRecord::Quantized(q) = self {
            out.extend_from_slice(&q.scale.to_le_bytes());
            out.extend_from_slice(&q.min_val.to_le_bytes());
        }
        out.extend_from_slice(&(meta.labels.len() as u32).to_le_bytes());
        for &l in &meta.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        match self {
            ActivationRecord::Quantized(q) => out.extend_from_slice(&q.payload),
            ActivationRecord::Raw(r) => {
                for v in r.values.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        let quantized = match magic {
            m if m == QACT_MAGIC => true,
            m if m == RACT_MAGIC => false,
            m => return Err(Error::Record(format!("magic {m:?}"))),
        };
        let round_tag = r.u32()?;
        let device_id = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
        let batch_index = r.u32()?;
        let rank = r.take(1)?[0] as usize;
        if rank == 0 {
            return Err(Error::Record("rank 0".into()));
        }
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if shape.contains(&0) {
            return Err(Error::Record(format!("zero dimension in {shape:?}")));
        }
        let (scale, min_val) = if quantized { (r.f32()?, r.f32()?) } else { (0.0, 0.0) };
        let nlabels = r.u32()? as usize;
        let labels = r
            .take(nlabels * 2)?
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        let meta = RecordMeta { round_tag, device_id, batch_index, labels };
        let n: usize = shape.iter().product();
        let record = if quantized {
            let payload = r.take(n)?.to_vec();
            ActivationRecord::Quantized(QuantizedActivation { shape, scale, min_val, payload, meta })
        } else {
            let data = r.take(4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            ActivationRecord::Raw(RawActivation { values: Tensor::new(shape, data)?, meta })
        };
        if r.pos != bytes.len() {
            return Err(Error::Record(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(record)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Record(format!("truncated at byte {} (need {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Server-side gradient discrepancy caused by quantizing one activation batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QuantizationError {
    /// `||grad_w F_S(a_hat) - grad_w F_S(a)||` of the batch-mean loss.
    pub gradient: f64,
    /// `|F_S(a_hat) - F_S(a)|`.
    pub loss: f64,
}

pub fn quantization_error(
    a: &Tensor<f32>,
    labels: &[usize],
    server: &Sequential<f32>,
    mode: Quantization,
) -> Result<QuantizationError> {
    let a_hat = match mode {
        Quantization::Affine8 => dequantize(&quantize(a)?)?,
        Quantization::Off => a.clone(),
    };
    let (loss_a, grad_a) = server_gradient(server, a, labels)?;
    let (loss_hat, grad_hat) = server_gradient(server, &a_hat, labels)?;
    let gradient = grad_a.iter().zip(&grad_hat).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    Ok(QuantizationError { gradient, loss: (loss_hat - loss_a).abs() })
}

/// Mean loss and flattened parameter gradient of `server` on one batch.
pub fn server_gradient(server: &Sequential<f32>, a: &Tensor<f32>, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let trace = server.forward(a)?;
    let (loss, g) = softmax_cross_entropy(trace.output(), labels)?;
    let grads = server.backward(&trace, &g)?;
    Ok((loss, grads.flatten_params()))
}
