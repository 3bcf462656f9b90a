//! Federated training loop for the four training modes.

mod config;
mod fedavg;
mod metrics;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

pub use config::{DatasetConfig, Mode, RunConfig, SCHEMA_VERSION};
pub use fedavg::fedavg;
pub use metrics::{write_metrics_csv, MetricRow, METRICS_HEADER};

use crate::buffer::{ActivationSwitch, BufferPartition};
use crate::data::{augment_hflip, shard_uniform, Dataset, Splits};
use crate::diagnostics::{self, DiagnosticsRecord, Estimates};
use crate::error::{Error, Result};
use crate::fnv::Fnv1a;
use crate::model::{pretrain, AuxiliaryHead, ModelSpec, PretrainOptions};
use crate::netsim::{
    comm_bytes_per_round, round_latency, CostSetting, DeviceWork, Direction, LatencyReport, Method, NetworkProfile,
    Purpose, Query, Speeds, TrafficLedger,
};
use crate::nn::{self, checkpoint, softmax_cross_entropy, Sequential};
use crate::quant::{compress, quantization_error, RecordMeta};
use crate::tensor::{argmax_rows, Tensor};

const EVAL_CHUNK: usize = 256;

/// Fraction of `indices` whose argmax prediction matches the label.
pub fn evaluate(model: &Sequential<f32>, data: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::EmptyDataset("evaluation set".into()));
    }
    let mut correct = 0usize;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (x, y) = data.batch(chunk)?;
        let pred = argmax_rows(&model.infer(&x)?);
        correct += pred.iter().zip(&y).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Accuracy of a split model evaluated without quantization.
pub fn evaluate_split(
    device: &Sequential<f32>,
    server: &Sequential<f32>,
    data: &Dataset,
    indices: &[usize],
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::EmptyDataset("evaluation set".into()));
    }
    let mut correct = 0usize;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (x, y) = data.batch(chunk)?;
        let pred = argmax_rows(&server.infer(&device.infer(&x)?)?);
        correct += pred.iter().zip(&y).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / indices.len() as f64)
}

impl Mode {
    /// Cost-model method describing one round of this mode.
    pub fn method(&self, transmits: bool) -> Method {
        match self {
            Mode::ClassicFL => Method::ClassicFl,
            Mode::VanillaDPFL => Method::VanillaDpfl,
            Mode::LocalLossDPFL => Method::LocalLoss,
            Mode::ActionFed if transmits => Method::ActionFedNoBuffer,
            Mode::ActionFed => Method::ActionFedWithBuffer,
        }
    }
}

/// Everything observed in one round.
#[derive(Clone, Debug, Serialize)]
pub struct RoundResult {
    pub round: u32,
    pub learning_rate: f64,
    pub transmitted: bool,
    /// Mean training loss of each device's server stack (full model in ClassicFL).
    pub server_loss: Vec<f64>,
    pub test_acc: f64,
    pub bytes_up: Vec<u64>,
    pub bytes_down: Vec<u64>,
    pub latency: LatencyReport,
    pub diagnostics: Option<DiagnosticsRecord>,
}

struct Worker {
    device_id: u16,
    samples: usize,
    batches: Vec<Vec<usize>>,
    buffer: BufferPartition,
}

struct RoundCtx<'a> {
    cfg: &'a RunConfig,
    data: &'a Dataset,
    device: &'a Sequential<f32>,
    server: &'a Sequential<f32>,
    aux: Option<&'a Sequential<f32>>,
    round: u32,
    eta: f64,
    switch: ActivationSwitch,
}

#[derive(Default)]
struct DeviceOutcome {
    device: Option<Sequential<f32>>,
    aux: Option<Sequential<f32>>,
    server: Option<Sequential<f32>>,
    loss: f64,
    ledger: TrafficLedger,
    eps: f64,
    delta: f64,
    loss_gap: f64,
}

fn stream_seed(seed: u64, device: u16, round: u32, batch: u32) -> u64 {
    let mut h = Fnv1a::new();
    h.write(&seed.to_le_bytes());
    h.write(&device.to_le_bytes());
    h.write(&round.to_le_bytes());
    h.write(&batch.to_le_bytes());
    h.finish()
}

fn param_bytes(stack: &Sequential<f32>) -> u64 {
    4 * stack.param_count() as u64
}

/// One SGD step of `server` on an activation batch; returns the loss and
/// the gradient with respect to the activation.
fn server_step(server: &mut Sequential<f32>, a: &Tensor<f32>, labels: &[usize], eta: f64) -> Result<(f64, Tensor<f32>)> {
    let trace = server.forward(a)?;
    let (loss, g) = softmax_cross_entropy(trace.output(), labels)?;
    let grads = server.backward(&trace, &g)?;
    server.sgd_step(&grads, eta)?;
    Ok((loss, grads.input))
}

impl RoundCtx<'_> {
    /// Batch `b` of device `k`, flipped with this round's stream when augmentation is on.
    fn batch(&self, k: u16, b: u32, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let (x, y) = self.data.batch(indices)?;
        if !self.cfg.augment {
            return Ok((x, y));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.cfg.seed, k, self.round, b));
        Ok((augment_hflip(&x, 0.5, &mut rng), y))
    }

    fn run_device(&self, w: &mut Worker) -> Result<DeviceOutcome> {
        match self.cfg.mode {
            Mode::ClassicFL => self.classic(w),
            Mode::VanillaDPFL => self.vanilla(w),
            Mode::LocalLossDPFL => self.local_loss(w),
            Mode::ActionFed => self.actionfed(w),
        }
    }

    fn classic(&self, w: &Worker) -> Result<DeviceOutcome> {
        let (t, k) = (self.round, w.device_id);
        let mut out = DeviceOutcome::default();
        let mut layers = self.device.layers().to_vec();
        layers.extend_from_slice(self.server.layers());
        let mut full = Sequential::new(layers);
        out.ledger.record(t, k, Direction::Down, Purpose::ModelDown, param_bytes(&full));
        let mut losses = Vec::new();
        for _ in 0..self.cfg.local_epochs {
            for (b, idx) in w.batches.iter().enumerate() {
                let (x, y) = self.batch(k, b as u32, idx)?;
                losses.push(nn::train_step(&mut full, &x, &y, self.eta)?);
            }
        }
        out.ledger.record(t, k, Direction::Up, Purpose::ModelUp, param_bytes(&full));
        let mut device = full.into_layers();
        let server = device.split_off(self.device.len());
        out.device = Some(Sequential::new(device));
        out.server = Some(Sequential::new(server));
        out.loss = mean(&losses);
        Ok(out)
    }

    fn vanilla(&self, w: &Worker) -> Result<DeviceOutcome> {
        let (t, k) = (self.round, w.device_id);
        let mut out = DeviceOutcome::default();
        let mut device = self.device.clone();
        let mut server = self.server.clone();
        out.ledger.record(t, k, Direction::Down, Purpose::ModelDown, param_bytes(&device));
        let mut losses = Vec::new();
        for _ in 0..self.cfg.local_epochs {
            for (b, idx) in w.batches.iter().enumerate() {
                let (x, y) = self.batch(k, b as u32, idx)?;
                let trace = device.forward(&x)?;
                let a = trace.output();
                out.ledger.record(t, k, Direction::Up, Purpose::Activation, 4 * a.len() as u64);
                out.ledger.record(t, k, Direction::Up, Purpose::Labels, 2 * y.len() as u64);
                let (loss, da) = server_step(&mut server, a, &y, self.eta)?;
                out.ledger.record(t, k, Direction::Down, Purpose::Gradient, 4 * da.len() as u64);
                if !device.is_frozen() {
                    let grads = device.backward(&trace, &da)?;
                    device.sgd_step(&grads, self.eta)?;
                }
                losses.push(loss);
            }
        }
        out.ledger.record(t, k, Direction::Up, Purpose::ModelUp, param_bytes(&device));
        out.device = Some(device);
        out.server = Some(server);
        out.loss = mean(&losses);
        Ok(out)
    }

    fn local_loss(&self, w: &Worker) -> Result<DeviceOutcome> {
        let (t, k) = (self.round, w.device_id);
        let mut out = DeviceOutcome::default();
        let mut device = self.device.clone();
        let mut aux = self.aux.expect("local-loss mode carries an auxiliary head").clone();
        let mut server = self.server.clone();
        let model_bytes = param_bytes(&device) + param_bytes(&aux);
        out.ledger.record(t, k, Direction::Down, Purpose::ModelDown, model_bytes);
        let mut losses = Vec::new();
        for _ in 0..self.cfg.local_epochs {
            for (b, idx) in w.batches.iter().enumerate() {
                let (x, y) = self.batch(k, b as u32, idx)?;
                let trace = device.forward(&x)?;
                let a = trace.output().clone();
                let head = aux.forward(&a)?;
                let (_, g) = softmax_cross_entropy(head.output(), &y)?;
                let head_grads = aux.backward(&head, &g)?;
                aux.sgd_step(&head_grads, self.eta)?;
                if !device.is_frozen() {
                    let grads = device.backward(&trace, &head_grads.input)?;
                    device.sgd_step(&grads, self.eta)?;
                }
                out.ledger.record(t, k, Direction::Up, Purpose::Activation, 4 * a.len() as u64);
                out.ledger.record(t, k, Direction::Up, Purpose::Labels, 2 * y.len() as u64);
                losses.push(server_step(&mut server, &a, &y, self.eta)?.0);
            }
        }
        out.ledger.record(t, k, Direction::Up, Purpose::ModelUp, model_bytes);
        out.device = Some(device);
        out.aux = Some(aux);
        out.server = Some(server);
        out.loss = mean(&losses);
        Ok(out)
    }

    fn actionfed(&self, w: &mut Worker) -> Result<DeviceOutcome> {
        let (t, k) = (self.round, w.device_id);
        let transmit = self.switch.is_on(t);
        let diag = self.cfg.diagnostics;
        let mut out = DeviceOutcome::default();
        let mut server = self.server.clone();
        let mut losses = Vec::new();
        let (mut eps, mut delta, mut gap) = (Vec::new(), Vec::new(), Vec::new());
        for epoch in 0..self.cfg.local_epochs {
            for (b, idx) in w.batches.iter().enumerate() {
                let b = b as u32;
                let mut fresh = None;
                if transmit && epoch == 0 {
                    let (x, y) = self.batch(k, b, idx)?;
                    let a = self.device.infer(&x)?;
                    let labels = y.iter().map(|&l| l as u16).collect();
                    let meta = RecordMeta { round_tag: t, device_id: k, batch_index: b, labels };
                    let rec = compress(&a, meta, self.cfg.quantization)?;
                    out.ledger.record(t, k, Direction::Up, Purpose::Activation, rec.wire_activation_bytes() as u64);
                    out.ledger.record(t, k, Direction::Up, Purpose::Labels, rec.wire_label_bytes() as u64);
                    w.buffer.store(self.switch, rec)?;
                    fresh = Some(a);
                }
                let rec = w.buffer.fetch(b)?;
                let a_hat = rec.to_tensor()?;
                let labels = rec.labels();
                if diag && epoch == 0 {
                    let a = match fresh {
                        Some(a) => a,
                        None => self.device.infer(&self.batch(k, b, idx)?.0)?,
                    };
                    let q = quantization_error(&a, &labels, self.server, self.cfg.quantization)?;
                    eps.push(q.gradient);
                    gap.push(q.loss);
                    delta.push(a_hat.l2_distance(&a)?);
                }
                losses.push(server_step(&mut server, &a_hat, &labels, self.eta)?.0);
            }
        }
        out.server = Some(server);
        out.loss = mean(&losses);
        out.eps = mean(&eps);
        out.delta = mean(&delta);
        out.loss_gap = mean(&gap);
        Ok(out)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Seeded federated training state; one [`Trainer::step`] per round.
pub struct Trainer {
    cfg: RunConfig,
    spec: ModelSpec,
    data: Dataset,
    splits: Splits,
    workers: Vec<Worker>,
    device: Sequential<f32>,
    server: Sequential<f32>,
    aux: Option<Sequential<f32>>,
    switch: ActivationSwitch,
    profile: NetworkProfile,
    speeds: Speeds,
    ledger: TrafficLedger,
    round: u32,
    gamma: f64,
    probe: Vec<usize>,
    sample_probe: Vec<usize>,
    records: Vec<DiagnosticsRecord>,
    trajectory: Vec<Vec<f64>>,
}

impl Trainer {
    /// Loads the configured dataset; relative IDX paths resolve against `base`.
    pub fn from_config(cfg: RunConfig, base: Option<&Path>) -> Result<Self> {
        let data = cfg.dataset.load(cfg.seed, base)?;
        Self::new(cfg, data)
    }

    pub fn new(cfg: RunConfig, data: Dataset) -> Result<Self> {
        cfg.validate()?;
        if data.num_classes() > u16::MAX as usize + 1 {
            return Err(Error::Config(format!("{} classes exceed the 2-byte label encoding", data.num_classes())));
        }
        let spec = cfg.model_spec(&data)?;
        let splits = Splits::new(data.len(), cfg.pretrain_fraction, cfg.test_fraction, cfg.seed ^ 0x5b17)?;
        let shards = shard_uniform(&splits.train, cfg.devices, cfg.seed ^ 0x54a2d)?;
        if let Some(s) = shards.iter().find(|s| s.is_empty()) {
            return Err(Error::EmptyDataset(format!("shard of device {}", s.device_id)));
        }
        let workers = shards
            .into_iter()
            .map(|s| Worker {
                device_id: s.device_id,
                samples: s.len(),
                batches: s.batches(cfg.batch_size),
                buffer: BufferPartition::new(s.device_id),
            })
            .collect();

        let opts = PretrainOptions {
            epochs: cfg.pretrain_epochs,
            learning_rate: cfg.learning_rate,
            batch_size: cfg.batch_size,
            seed: cfg.seed,
        };
        let (full, op) = if cfg.pretrain_epochs > 0 {
            pretrain(&spec, &data, &splits.pretrain, opts)?
        } else {
            spec.build::<f32>(cfg.seed)?
        };
        let mut device = full.into_layers();
        let server = Sequential::new(device.split_off(op));
        let mut device = Sequential::new(device);
        if cfg.mode == Mode::ActionFed || (cfg.mode == Mode::VanillaDPFL && cfg.freeze_device) {
            device.freeze();
        }
        let aux = (cfg.mode == Mode::LocalLossDPFL).then(|| {
            let plan = spec.plan().expect("spec already built");
            AuxiliaryHead::new(plan.activation_shape(), spec.num_classes, cfg.seed ^ 0xa0c5).stack
        });

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd1a6);
        let mut probe = splits.train.clone();
        probe.shuffle(&mut rng);
        probe.truncate(cfg.probe_size.max(1));
        let mut sample_probe = probe.clone();
        sample_probe.truncate(cfg.sample_probe_size.max(1));

        Ok(Trainer {
            switch: ActivationSwitch::new(cfg.rho)?,
            profile: cfg.network_profile()?,
            speeds: cfg.speeds.unwrap_or_default(),
            spec,
            data,
            splits,
            workers,
            device,
            server,
            aux,
            ledger: TrafficLedger::new(),
            round: 0,
            gamma: 0.0,
            probe,
            sample_probe,
            records: Vec::new(),
            trajectory: Vec::new(),
            cfg,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn device_model(&self) -> &Sequential<f32> {
        &self.device
    }

    pub fn server_model(&self) -> &Sequential<f32> {
        &self.server
    }

    pub fn aux_model(&self) -> Option<&Sequential<f32>> {
        self.aux.as_ref()
    }

    pub fn ledger(&self) -> &TrafficLedger {
        &self.ledger
    }

    pub fn records(&self) -> &[DiagnosticsRecord] {
        &self.records
    }

    /// Samples held by each device, in device order.
    pub fn shard_sizes(&self) -> Vec<usize> {
        self.workers.iter().map(|w| w.samples).collect()
    }

    /// Bytes currently held by the replay buffer.
    pub fn buffer_bytes(&self) -> usize {
        self.workers.iter().map(|w| w.buffer.total_bytes()).sum()
    }

    /// Cost-model setting matching this run's shards.
    pub fn cost_setting(&self) -> CostSetting {
        CostSetting {
            samples_per_device: self.shard_sizes(),
            batch_size: self.cfg.batch_size,
            quantization: self.cfg.quantization,
        }
    }

    /// Full model: device layers followed by server layers.
    pub fn global_model(&self) -> Sequential<f32> {
        let mut layers = self.device.layers().to_vec();
        layers.extend_from_slice(self.server.layers());
        Sequential::new(layers)
    }

    pub fn train_accuracy(&self) -> Result<f64> {
        evaluate_split(&self.device, &self.server, &self.data, &self.splits.train)
    }

    pub fn test_accuracy(&self) -> Result<f64> {
        if self.splits.test.is_empty() {
            return Ok(f64::NAN);
        }
        evaluate_split(&self.device, &self.server, &self.data, &self.splits.test)
    }

    pub fn step(&mut self) -> Result<RoundResult> {
        let t = self.round;
        self.step_inner().map_err(|e| e.in_round(t))
    }

    fn step_inner(&mut self) -> Result<RoundResult> {
        let t = self.round;
        let eta = self.cfg.sgd().rate_at(t);
        let transmitted = self.cfg.mode != Mode::ActionFed || self.switch.is_on(t);

        let mut record = if self.cfg.diagnostics {
            let chunk = self.cfg.batch_size.max(EVAL_CHUNK);
            let (loss, grad_norm_sq) =
                diagnostics::probe_gradient(&self.device, &self.server, &self.data, &self.probe, chunk)?;
            let max_sample =
                diagnostics::max_sample_grad_sq(&self.device, &self.server, &self.data, &self.sample_probe)?;
            self.trajectory.push(self.server.flat_weights());
            Some(DiagnosticsRecord { round: t, eta, grad_norm_sq, loss, max_sample_grad_sq: max_sample, ..Default::default() })
        } else {
            None
        };

        let ctx = RoundCtx {
            cfg: &self.cfg,
            data: &self.data,
            device: &self.device,
            server: &self.server,
            aux: self.aux.as_ref(),
            round: t,
            eta,
            switch: self.switch,
        };
        let outcomes: Vec<DeviceOutcome> =
            self.workers.par_iter_mut().map(|w| ctx.run_device(w)).collect::<Result<_>>()?;

        let counts = self.shard_sizes();
        let mut outcomes = outcomes;
        for o in &mut outcomes {
            self.ledger.merge(std::mem::take(&mut o.ledger));
        }
        let server_w: Vec<_> = outcomes.iter().map(|o| o.server.as_ref().expect("server trained").weights()).collect();
        self.server.set_weights(&fedavg(&server_w, &counts)?)?;
        if !self.device.is_frozen() {
            let dev_w: Vec<_> = outcomes.iter().map(|o| o.device.as_ref().expect("device trained").weights()).collect();
            self.device.set_weights(&fedavg(&dev_w, &counts)?)?;
        }
        if let Some(aux) = &mut self.aux {
            let aux_w: Vec<_> = outcomes.iter().map(|o| o.aux.as_ref().expect("head trained").weights()).collect();
            aux.set_weights(&fedavg(&aux_w, &counts)?)?;
        }

        let q = |k: u16, d| Query::default().round(t).device(k).direction(d);
        let bytes_up: Vec<u64> = self.workers.iter().map(|w| self.ledger.total(q(w.device_id, Direction::Up))).collect();
        let bytes_down: Vec<u64> =
            self.workers.iter().map(|w| self.ledger.total(q(w.device_id, Direction::Down))).collect();
        let units = comm_bytes_per_round(self.cfg.mode.method(transmitted), &self.spec, &self.cost_setting())?;
        let work: Vec<DeviceWork> = units
            .devices
            .iter()
            .zip(bytes_up.iter().zip(&bytes_down))
            .map(|(c, (&up, &down))| DeviceWork {
                up_bytes: up,
                down_bytes: down,
                device_units: c.device_units,
                server_units: c.server_units,
            })
            .collect();
        let latency = round_latency(&work, self.speeds, &self.profile)?;

        self.gamma += eta;
        if let Some(r) = &mut record {
            r.gamma = self.gamma;
            r.eps = outcomes.iter().map(|o| o.eps).collect();
            r.delta = outcomes.iter().map(|o| o.delta).collect();
            r.loss_gap = outcomes.iter().map(|o| o.loss_gap).collect();
            self.records.push(r.clone());
        }

        let test_acc = self.test_accuracy()?;
        log::info!(
            "round {t}: loss {:.4} test acc {:.4} up {} B",
            mean(&outcomes.iter().map(|o| o.loss).collect::<Vec<_>>()),
            test_acc,
            bytes_up.iter().sum::<u64>()
        );
        self.round += 1;
        Ok(RoundResult {
            round: t,
            learning_rate: eta,
            transmitted,
            server_loss: outcomes.iter().map(|o| o.loss).collect(),
            test_acc,
            bytes_up,
            bytes_down,
            latency,
            diagnostics: record,
        })
    }

    /// Sampled estimates for the bound report; requires diagnostics.
    pub fn estimates(&self) -> Result<Estimates> {
        if self.records.is_empty() {
            return Err(Error::Config("no diagnostics recorded; enable `diagnostics`".into()));
        }
        let probe: Vec<usize> = self.probe.iter().copied().take(512).collect();
        let grad = |w: &[f64]| {
            let mut s = self.server.clone();
            s.set_flat_weights(w)?;
            Ok(diagnostics::full_gradient(&self.device, &s, &self.data, &probe, EVAL_CHUNK)?.1)
        };
        let stride = self.trajectory.len().div_ceil(5).max(1);
        let anchors: Vec<Vec<f64>> = self.trajectory.iter().step_by(stride).cloned().collect();
        let l_hat = diagnostics::estimate_l(grad, &anchors, 4, 1e-2, self.cfg.seed ^ 0x1_5e0)?;
        Ok(Estimates {
            g_hat: diagnostics::estimate_g(&self.records),
            l_hat,
            f_star: self.records.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min),
            devices: self.workers.len(),
        })
    }
}

/// Result of a complete run.
pub struct RunOutput {
    pub config: RunConfig,
    pub model: Sequential<f32>,
    pub op_index: usize,
    pub rounds: Vec<RoundResult>,
    pub metrics: Vec<MetricRow>,
    pub ledger: TrafficLedger,
    pub records: Vec<DiagnosticsRecord>,
    pub estimates: Option<Estimates>,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    mode: &'a str,
    model: String,
    rounds: u32,
    train_acc: f64,
    test_acc: f64,
    bytes_up: u64,
    bytes_down: u64,
    sim_latency_s: f64,
}

impl RunOutput {
    /// Writes `metrics.csv`, `model.sfl`, `summary.json` and, when
    /// diagnostics ran, `diagnostics.csv`, `estimates.json` and `bound_report.txt`.
    pub fn write_artifacts(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_metrics_csv(&self.metrics, fs::File::create(dir.join("metrics.csv"))?)?;
        checkpoint::write_checkpoint(&self.model, std::io::BufWriter::new(fs::File::create(dir.join("model.sfl"))?))?;
        let summary = Summary {
            mode: self.config.mode.as_str(),
            model: self.config.model.clone(),
            rounds: self.config.rounds,
            train_acc: self.train_acc,
            test_acc: self.test_acc,
            bytes_up: self.ledger.total(Query::default().direction(Direction::Up)),
            bytes_down: self.ledger.total(Query::default().direction(Direction::Down)),
            sim_latency_s: self.rounds.iter().map(|r| r.latency.round_s()).sum(),
        };
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        if let Some(est) = self.estimates {
            if self.records.len() >= 2 {
                let report = diagnostics::bound_report(&self.records, est)?;
                report.write_csv(fs::File::create(dir.join("diagnostics.csv"))?)?;
                fs::write(dir.join("bound_report.txt"), report.summary())?;
            }
            fs::write(dir.join("estimates.json"), serde_json::to_string_pretty(&est)?)?;
        }
        Ok(())
    }
}

/// Runs every configured round and returns the concatenated final model.
pub fn run_training(cfg: RunConfig, data: Dataset) -> Result<RunOutput> {
    let mut trainer = Trainer::new(cfg, data)?;
    let mut rounds = Vec::new();
    let mut metrics = Vec::new();
    for _ in 0..trainer.cfg.rounds {
        let r = trainer.step()?;
        metrics.extend(MetricRow::from_round(&r, trainer.cfg.mode));
        rounds.push(r);
    }
    finish(trainer, rounds, metrics)
}

fn finish(trainer: Trainer, rounds: Vec<RoundResult>, metrics: Vec<MetricRow>) -> Result<RunOutput> {
    let estimates = if trainer.cfg.diagnostics { Some(trainer.estimates()?) } else { None };
    Ok(RunOutput {
        train_acc: trainer.train_accuracy()?,
        test_acc: trainer.test_accuracy()?,
        model: trainer.global_model(),
        op_index: trainer.device.len(),
        config: trainer.cfg,
        rounds,
        metrics,
        ledger: trainer.ledger,
        records: trainer.records,
        estimates,
    })
}
