use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_blobs, load_idx, Dataset};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::netsim::{NetworkProfile, Speeds};
use crate::nn::SgdState;
use crate::quant::Quantization;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    ClassicFL,
    VanillaDPFL,
    LocalLossDPFL,
    ActionFed,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::ClassicFL => "ClassicFL",
            Mode::VanillaDPFL => "VanillaDPFL",
            Mode::LocalLossDPFL => "LocalLossDPFL",
            Mode::ActionFed => "ActionFed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Blobs {
        classes: usize,
        per_class: usize,
        shape: [usize; 3],
        sigma: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

impl DatasetConfig {
    /// Loads or generates the data. Relative IDX paths resolve against `base`.
    pub fn load(&self, run_seed: u64, base: Option<&Path>) -> Result<Dataset> {
        match self {
            DatasetConfig::Blobs { classes, per_class, shape, sigma, seed } => {
                generate_blobs(*classes, *per_class, *shape, *sigma, seed.unwrap_or(run_seed))
            }
            DatasetConfig::Idx { images, labels } => {
                let resolve = |p: &PathBuf| match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                load_idx(resolve(images), resolve(labels))
            }
        }
    }
}

fn default_model() -> String {
    "tiny_vgg".into()
}

fn one() -> u32 {
    1
}

fn one_usize() -> usize {
    1
}

fn default_pretrain_epochs() -> usize {
    3
}

fn default_fraction() -> f64 {
    0.2
}

fn default_probe() -> usize {
    10_000
}

fn default_sample_probe() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub mode: Mode,
    /// Zoo name (`tiny_vgg`, `tiny_res`, `vgg11`, `resnet9`) or a layer string such as `C8-MP|C16-FC`.
    #[serde(default = "default_model")]
    pub model: String,
    pub devices: usize,
    pub rounds: u32,
    /// Activation transmission period; ActionFed only.
    #[serde(default = "one")]
    pub rho: u32,
    #[serde(default)]
    pub quantization: Quantization,
    pub learning_rate: f64,
    #[serde(default)]
    pub lr_decay: f64,
    pub batch_size: usize,
    /// Random horizontal flips with probability 0.5.
    #[serde(default)]
    pub augment: bool,
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetConfig,
    /// Epochs of central pre-training on the held-out split before federation.
    #[serde(default = "default_pretrain_epochs")]
    pub pretrain_epochs: usize,
    #[serde(default = "default_fraction")]
    pub pretrain_fraction: f64,
    #[serde(default = "default_fraction")]
    pub test_fraction: f64,
    #[serde(default = "one_usize")]
    pub local_epochs: usize,
    /// Keep the device half fixed in VanillaDPFL; ActionFed always freezes it.
    #[serde(default)]
    pub freeze_device: bool,
    #[serde(default)]
    pub profile: Option<String>,
    #[serde(default)]
    pub speeds: Option<Speeds>,
    #[serde(default)]
    pub diagnostics: bool,
    /// Samples used for full-gradient diagnostics.
    #[serde(default = "default_probe")]
    pub probe_size: usize,
    /// Samples whose individual gradient norms feed the `G` estimate.
    #[serde(default = "default_sample_probe")]
    pub sample_probe_size: usize,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return fail(format!("schema_version {} (supported: {SCHEMA_VERSION})", self.schema_version));
        }
        if self.devices == 0 || self.devices > u16::MAX as usize {
            return fail(format!("devices = {}", self.devices));
        }
        if self.rounds == 0 {
            return fail("rounds must be at least 1".into());
        }
        if self.rho == 0 {
            return fail("rho must be at least 1".into());
        }
        if self.batch_size == 0 || self.local_epochs == 0 {
            return fail("batch_size and local_epochs must be positive".into());
        }
        SgdState::with_decay(self.learning_rate, self.lr_decay)?;
        if let Some(p) = &self.profile {
            p.parse::<NetworkProfile>()?;
        }
        if let Some(s) = self.speeds {
            Speeds::new(s.device, s.server)?;
        }
        Ok(())
    }

    pub fn sgd(&self) -> SgdState {
        SgdState { learning_rate: self.learning_rate, decay: self.lr_decay }
    }

    pub fn network_profile(&self) -> Result<NetworkProfile> {
        self.profile.as_deref().map_or(Ok(NetworkProfile::wifi()), str::parse)
    }

    pub fn model_spec(&self, data: &Dataset) -> Result<ModelSpec> {
        ModelSpec::from_name_or_layers(&self.model, data.sample_shape(), data.num_classes())
    }

    /// Small blobs run used by smoke tests and `sfl selftest`.
    pub fn smoke(mode: Mode) -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            mode,
            model: default_model(),
            devices: 2,
            rounds: 2,
            rho: 1,
            quantization: Quantization::Affine8,
            learning_rate: 0.05,
            lr_decay: 0.0,
            batch_size: 8,
            augment: false,
            seed: 1,
            dataset: DatasetConfig::Blobs { classes: 2, per_class: 20, shape: [1, 8, 8], sigma: 0.05, seed: None },
            pretrain_epochs: 0,
            pretrain_fraction: 0.2,
            test_fraction: 0.2,
            local_epochs: 1,
            freeze_device: false,
            profile: None,
            speeds: None,
            diagnostics: false,
            probe_size: default_probe(),
            sample_probe_size: default_sample_probe(),
        }
    }
}
