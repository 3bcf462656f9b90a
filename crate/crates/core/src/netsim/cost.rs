//! Analytic per-round device cost of each training method.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, Plan};
use crate::quant::{qact_header_len, Quantization, LABEL_BYTES};

pub const BYTES_PER_PARAM: u64 = 4;
pub const BYTES_PER_RAW_ELEMENT: u64 = 4;
pub const GIB: f64 = (1u64 << 30) as f64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    ClassicFl,
    VanillaDpfl,
    LocalLoss,
    ActionFedNoBuffer,
    ActionFedWithBuffer,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::ClassicFl,
        Method::VanillaDpfl,
        Method::LocalLoss,
        Method::ActionFedNoBuffer,
        Method::ActionFedWithBuffer,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Method::ClassicFl => "FL",
            Method::VanillaDpfl => "SplitFed",
            Method::LocalLoss => "LGL",
            Method::ActionFedNoBuffer => "ActionFed w/o buffer",
            Method::ActionFedWithBuffer => "ActionFed w buffer",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Data layout of one round: samples held by each device, batch size and
/// whether activations are quantized (ActionFed only).
#[derive(Clone, Debug, PartialEq)]
pub struct CostSetting {
    pub samples_per_device: Vec<usize>,
    pub batch_size: usize,
    pub quantization: Quantization,
}

impl CostSetting {
    pub fn uniform(devices: usize, samples: usize, batch_size: usize, quantization: Quantization) -> Self {
        CostSetting { samples_per_device: vec![samples; devices], batch_size, quantization }
    }

    /// CIFAR-10 split over five devices: 10000 samples each, batches of 100.
    pub fn cifar10_k5() -> Self {
        Self::uniform(5, 10_000, 100, Quantization::Affine8)
    }

    fn batch_sizes(&self, samples: usize) -> impl Iterator<Item = usize> + '_ {
        let bs = self.batch_size.max(1);
        (0..samples.div_ceil(bs)).map(move |i| bs.min(samples - i * bs))
    }
}

/// Size terms of a split model that the cost formulas depend on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSizes {
    /// `|w|`
    pub params: u64,
    /// `|w_C|`
    pub device_params: u64,
    /// Parameters of the local-loss auxiliary head.
    pub aux_params: u64,
    /// Activation elements per sample, `|a_k| / |D_k|`.
    pub activation_elements: u64,
    pub activation_rank: usize,
    pub device_macs: u64,
    pub server_macs: u64,
    pub aux_macs: u64,
}

impl ModelSizes {
    pub fn of(spec: &ModelSpec) -> Result<Self> {
        let plan = spec.plan()?;
        let act = plan.activation_elements() as u64;
        let classes = spec.num_classes as u64;
        Ok(ModelSizes {
            params: Plan::params(&plan.layers) as u64,
            device_params: Plan::params(plan.device()) as u64,
            aux_params: act * classes + classes,
            activation_elements: act,
            activation_rank: plan.activation_shape().len(),
            device_macs: Plan::forward_macs(plan.device()),
            server_macs: Plan::forward_macs(plan.server()),
            aux_macs: act * classes,
        })
    }
}

/// One device's cost for one round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DeviceCost {
    pub up_bytes: u64,
    pub down_bytes: u64,
    /// Device multiply-accumulates; training a stack counts twice its forward pass.
    pub device_units: u64,
    pub server_units: u64,
}

impl DeviceCost {
    pub fn bytes(&self) -> u64 {
        self.up_bytes + self.down_bytes
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub method: Method,
    pub devices: Vec<DeviceCost>,
}

impl CostReport {
    pub fn total_bytes(&self) -> u64 {
        self.devices.iter().map(DeviceCost::bytes).sum()
    }

    pub fn total_up(&self) -> u64 {
        self.devices.iter().map(|d| d.up_bytes).sum()
    }

    pub fn total_down(&self) -> u64 {
        self.devices.iter().map(|d| d.down_bytes).sum()
    }

    pub fn total_gib(&self) -> f64 {
        self.total_bytes() as f64 / GIB
    }

    pub fn per_device_gib(&self) -> f64 {
        self.total_gib() / self.devices.len().max(1) as f64
    }

    pub fn device_units(&self) -> u64 {
        self.devices.iter().map(|d| d.device_units).sum()
    }
}

/// Bytes of one ActionFed activation transfer for a batch of `batch` samples.
pub fn actionfed_batch_bytes(sizes: &ModelSizes, batch: usize, quantization: Quantization) -> u64 {
    let b = batch as u64;
    let labels = LABEL_BYTES as u64 * b;
    match quantization {
        Quantization::Affine8 => qact_header_len(sizes.activation_rank + 1) as u64 + labels + b * sizes.activation_elements,
        Quantization::Off => labels + BYTES_PER_RAW_ELEMENT * b * sizes.activation_elements,
    }
}

/// Per-device traffic and compute of one round of `method`.
///
/// Model exchanges cost `4` bytes per parameter each way; full-precision
/// activations and gradients `4` bytes per element; labels `2` bytes per
/// sample. Quantized ActionFed transfers cost one `QACT` record per batch.
/// The quantization setting only affects ActionFed.
pub fn comm_bytes_per_round(method: Method, spec: &ModelSpec, setting: &CostSetting) -> Result<CostReport> {
    if setting.samples_per_device.is_empty() {
        return Err(Error::Config("cost setting has no devices".into()));
    }
    let sizes = ModelSizes::of(spec)?;
    let devices = setting
        .samples_per_device
        .iter()
        .map(|&n| device_cost(method, &sizes, setting, n))
        .collect();
    Ok(CostReport { method, devices })
}

fn device_cost(method: Method, s: &ModelSizes, setting: &CostSetting, samples: usize) -> DeviceCost {
    let n = samples as u64;
    let act = BYTES_PER_RAW_ELEMENT * n * s.activation_elements;
    let labels = LABEL_BYTES as u64 * n;
    let server_train = 2 * s.server_macs * n;
    match method {
        Method::ClassicFl => {
            let model = BYTES_PER_PARAM * s.params;
            DeviceCost {
                up_bytes: model,
                down_bytes: model,
                device_units: 2 * (s.device_macs + s.server_macs) * n,
                server_units: 0,
            }
        }
        Method::VanillaDpfl => {
            let model = BYTES_PER_PARAM * s.device_params;
            DeviceCost {
                up_bytes: model + act + labels,
                down_bytes: model + act,
                device_units: 2 * s.device_macs * n,
                server_units: server_train,
            }
        }
        Method::LocalLoss => {
            let model = BYTES_PER_PARAM * (s.device_params + s.aux_params);
            DeviceCost {
                up_bytes: model + act + labels,
                down_bytes: model,
                device_units: 2 * (s.device_macs + s.aux_macs) * n,
                server_units: server_train,
            }
        }
        Method::ActionFedNoBuffer => DeviceCost {
            up_bytes: setting
                .batch_sizes(samples)
                .map(|b| actionfed_batch_bytes(s, b, setting.quantization))
                .sum(),
            down_bytes: 0,
            device_units: s.device_macs * n,
            server_units: server_train,
        },
        Method::ActionFedWithBuffer => DeviceCost { up_bytes: 0, down_bytes: 0, device_units: 0, server_units: server_train },
    }
}

/// Cost of ActionFed at `round` under transmission period `rho`.
pub fn actionfed_round(spec: &ModelSpec, setting: &CostSetting, round: u32, rho: u32) -> Result<CostReport> {
    let method = if crate::buffer::switch_is_on(round, rho) {
        Method::ActionFedNoBuffer
    } else {
        Method::ActionFedWithBuffer
    };
    comm_bytes_per_round(method, spec, setting)
}

/// `bytes(a) / bytes(b)`, aggregated over devices.
pub fn cost_ratio(a: Method, b: Method, spec: &ModelSpec, setting: &CostSetting) -> Result<f64> {
    let num = comm_bytes_per_round(a, spec, setting)?.total_bytes();
    let den = comm_bytes_per_round(b, spec, setting)?.total_bytes();
    if den == 0 {
        return Err(Error::Config(format!("{b} has zero traffic; ratio undefined")));
    }
    Ok(num as f64 / den as f64)
}

/// Per-device computation units of `method` for one round.
pub fn computation_units(method: Method, spec: &ModelSpec, setting: &CostSetting) -> Result<Vec<u64>> {
    Ok(comm_bytes_per_round(method, spec, setting)?.devices.iter().map(|d| d.device_units).collect())
}
