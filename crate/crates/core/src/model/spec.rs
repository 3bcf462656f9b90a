//! Compact architecture strings such as `C64-MP-C128-MP|C256-MP-FC`.
//!
//! Tokens: `C<n>` is a 3x3 convolution with `n` filters followed by ReLU,
//! `MP` a 2x2 max-pool, `RB<n>` a residual block with `n` output channels,
//! `FC<n>` a dense layer (ReLU unless it is the last token) and a bare `FC`
//! the classifier. A flatten is inserted before the first dense layer. The
//! single `|` marks the offloading point.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fnv::Fnv1a;
use crate::nn::{Layer, LayerKind, Sequential};
use crate::tensor::Real;

pub const TINY_VGG: &str = "C8-MP-C16-MP|C32-MP-FC";
pub const TINY_RES: &str = "C8-MP-C16-MP|RB32-FC";
pub const VGG11: &str = "C64-MP-C128-MP|C256-C256-MP-C512-C512-MP-C512-C512-FC4096-FC4096-FC";
pub const RESNET9: &str = "C64-MP-C128-MP|RB256-RB512-RB512-FC";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Token {
    Conv(usize),
    MaxPool,
    Residual(usize),
    Fc(Option<usize>),
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Conv(n) => write!(f, "C{n}"),
            Token::MaxPool => write!(f, "MP"),
            Token::Residual(n) => write!(f, "RB{n}"),
            Token::Fc(Some(n)) => write!(f, "FC{n}"),
            Token::Fc(None) => write!(f, "FC"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub name: String,
    pub device: Vec<Token>,
    pub server: Vec<Token>,
    /// Per-sample `(C, H, W)`.
    pub input_shape: [usize; 3],
    pub num_classes: usize,
}

/// A layer together with its per-sample input/output shapes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlannedLayer {
    pub kind: LayerKind,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
}

impl PlannedLayer {
    pub fn params(&self) -> usize {
        self.kind.param_count()
    }

    pub fn forward_macs(&self) -> u64 {
        self.kind.forward_macs(&self.input)
    }
}

/// Shape-checked layer list of a spec, with the offloading point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plan {
    pub layers: Vec<PlannedLayer>,
    pub op_index: usize,
}

impl Plan {
    pub fn device(&self) -> &[PlannedLayer] {
        &self.layers[..self.op_index]
    }

    pub fn server(&self) -> &[PlannedLayer] {
        &self.layers[self.op_index..]
    }

    pub fn params(layers: &[PlannedLayer]) -> usize {
        layers.iter().map(PlannedLayer::params).sum()
    }

    pub fn forward_macs(layers: &[PlannedLayer]) -> u64 {
        layers.iter().map(PlannedLayer::forward_macs).sum()
    }

    /// Per-sample shape of the activation crossing the offloading point.
    pub fn activation_shape(&self) -> &[usize] {
        &self.layers[self.op_index - 1].output
    }

    pub fn activation_elements(&self) -> usize {
        self.activation_shape().iter().product()
    }
}

fn parse_tokens(part: &str) -> Result<Vec<Token>> {
    part.split('-')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            let num = |rest: &str| -> Result<usize> {
                rest.parse::<usize>()
                    .ok()
                    .filter(|&n| n > 0)
                    .ok_or_else(|| Error::Spec(format!("bad width in token {t:?}")))
            };
            if t == "MP" {
                Ok(Token::MaxPool)
            } else if t == "FC" {
                Ok(Token::Fc(None))
            } else if let Some(rest) = t.strip_prefix("FC") {
                Ok(Token::Fc(Some(num(rest)?)))
            } else if let Some(rest) = t.strip_prefix("RB") {
                Ok(Token::Residual(num(rest)?))
            } else if let Some(rest) = t.strip_prefix('C') {
                Ok(Token::Conv(num(rest)?))
            } else {
                Err(Error::Spec(format!("unknown token {t:?}")))
            }
        })
        .collect()
}

impl ModelSpec {
    pub fn parse(name: &str, layers: &str, input_shape: [usize; 3], num_classes: usize) -> Result<Self> {
        let parts: Vec<&str> = layers.split('|').collect();
        if parts.len() != 2 {
            return Err(Error::Spec(format!("{layers:?} must contain exactly one '|' offloading point")));
        }
        let spec = ModelSpec {
            name: name.to_string(),
            device: parse_tokens(parts[0])?,
            server: parse_tokens(parts[1])?,
            input_shape,
            num_classes,
        };
        spec.plan()?;
        Ok(spec)
    }

    pub fn tiny_vgg(input_shape: [usize; 3], num_classes: usize) -> Self {
        Self::parse("tinyvgg", TINY_VGG, input_shape, num_classes).expect("zoo spec is valid")
    }

    pub fn tiny_res(input_shape: [usize; 3], num_classes: usize) -> Self {
        Self::parse("tinyres", TINY_RES, input_shape, num_classes).expect("zoo spec is valid")
    }

    pub fn vgg11(input_shape: [usize; 3], num_classes: usize) -> Self {
        Self::parse("vgg11", VGG11, input_shape, num_classes).expect("zoo spec is valid")
    }

    pub fn resnet9(input_shape: [usize; 3], num_classes: usize) -> Self {
        Self::parse("resnet9", RESNET9, input_shape, num_classes).expect("zoo spec is valid")
    }

    /// Looks up a zoo model by name, otherwise parses `name` as a layer string.
    pub fn from_name_or_layers(name: &str, input_shape: [usize; 3], num_classes: usize) -> Result<Self> {
        let lower: String = name.to_ascii_lowercase().chars().filter(|c| *c != '_' && *c != '-').collect();
        let layers = match lower.as_str() {
            "tinyvgg" => TINY_VGG,
            "tinyres" => TINY_RES,
            "vgg11" => VGG11,
            "resnet9" => RESNET9,
            _ => return Self::parse("custom", name, input_shape, num_classes),
        };
        Self::parse(&lower, layers, input_shape, num_classes)
    }

    pub fn layer_string(&self) -> String {
        let join = |ts: &[Token]| ts.iter().map(Token::to_string).collect::<Vec<_>>().join("-");
        format!("{}|{}", join(&self.device), join(&self.server))
    }

    /// Stable identity of the architecture, shared by both halves of a split.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write(self.layer_string().as_bytes());
        for d in self.input_shape {
            h.write(&(d as u64).to_le_bytes());
        }
        h.write(&(self.num_classes as u64).to_le_bytes());
        h.finish()
    }

    /// Expands tokens into layers and checks every boundary.
    pub fn plan(&self) -> Result<Plan> {
        if self.num_classes == 0 || self.input_shape.contains(&0) {
            return Err(Error::Spec(format!("input {:?}, {} classes", self.input_shape, self.num_classes)));
        }
        if self.device.is_empty() || self.server.is_empty() {
            return Err(Error::Spec("both sides of the offloading point need layers".into()));
        }
        let all: Vec<Token> = self.device.iter().chain(&self.server).copied().collect();
        let last = all.len() - 1;
        if !matches!(all[last], Token::Fc(_)) {
            return Err(Error::Spec("the last token must be the FC classifier".into()));
        }
        let mut layers = Vec::new();
        let mut shape = self.input_shape.to_vec();
        let mut op_index = 0;
        for (i, tok) in all.iter().enumerate() {
            let mut kinds = Vec::new();
            match *tok {
                Token::Conv(n) => {
                    kinds.push(LayerKind::Conv3x3 { in_ch: shape[0], out_ch: n });
                    kinds.push(LayerKind::Relu);
                }
                Token::MaxPool => kinds.push(LayerKind::MaxPool2x2),
                Token::Residual(n) => kinds.push(LayerKind::Residual { in_ch: shape[0], out_ch: n }),
                Token::Fc(width) => {
                    if shape.len() != 1 {
                        kinds.push(LayerKind::Flatten);
                    }
                    let inputs = shape.iter().product();
                    let outputs = if i == last {
                        match width {
                            Some(w) if w != self.num_classes => {
                                return Err(Error::Spec(format!(
                                    "classifier FC{w} does not match {} classes",
                                    self.num_classes
                                )))
                            }
                            _ => self.num_classes,
                        }
                    } else {
                        width.ok_or_else(|| Error::Spec("hidden FC needs a width".into()))?
                    };
                    kinds.push(LayerKind::Dense { inputs, outputs });
                    if i != last {
                        kinds.push(LayerKind::Relu);
                    }
                }
            }
            for kind in kinds {
                let output = kind.output_shape(&shape).map_err(|reason| {
                    Error::Spec(format!("boundary {} ({tok} as {kind:?}): {reason}", layers.len()))
                })?;
                layers.push(PlannedLayer { kind, input: shape.clone(), output: output.clone() });
                shape = output;
            }
            if i + 1 == self.device.len() {
                op_index = layers.len();
            }
        }
        Ok(Plan { layers, op_index })
    }

    /// Instantiates the full model with seeded uniform initialisation.
    pub fn build<T: Real>(&self, seed: u64) -> Result<(Sequential<T>, usize)> {
        let plan = self.plan()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = plan.layers.iter().map(|p| Layer::init(p.kind, &mut rng)).collect();
        Ok((Sequential::new(layers), plan.op_index))
    }
}
