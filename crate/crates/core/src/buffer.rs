//! Server-side activation cache and the device-side transmission schedule.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::quant::ActivationRecord;
use crate::tensor::Tensor;

/// Gates activation transmission to rounds with `t mod rho == 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActivationSwitch {
    rho: u32,
}

impl ActivationSwitch {
    pub fn new(rho: u32) -> Result<Self> {
        if rho == 0 {
            return Err(Error::Config("rho must be at least 1".into()));
        }
        Ok(ActivationSwitch { rho })
    }

    pub fn rho(&self) -> u32 {
        self.rho
    }

    pub fn is_on(&self, round: u32) -> bool {
        switch_is_on(round, self.rho)
    }

    /// Number of transmission rounds among `0..rounds`.
    pub fn transmissions(&self, rounds: u32) -> u32 {
        rounds.div_ceil(self.rho)
    }
}

/// `rho == 0` is treated as never on.
pub fn switch_is_on(round: u32, rho: u32) -> bool {
    rho != 0 && round.is_multiple_of(rho)
}

/// The cached records of one device, keyed by batch index.
#[derive(Clone, Debug, Default)]
pub struct BufferPartition {
    device_id: u16,
    entries: BTreeMap<u32, ActivationRecord>,
    last_refresh: Option<u32>,
}

impl BufferPartition {
    pub fn new(device_id: u16) -> Self {
        BufferPartition { device_id, ..Default::default() }
    }

    pub fn device_id(&self) -> u16 {
        self.device_id
    }

    /// Stores a record produced at a transmission round, replacing any
    /// earlier record for the same batch.
    pub fn store(&mut self, switch: ActivationSwitch, record: ActivationRecord) -> Result<()> {
        let meta = record.meta();
        if !switch.is_on(meta.round_tag) {
            return Err(Error::SwitchOff { round: meta.round_tag, rho: switch.rho() });
        }
        if meta.device_id != self.device_id {
            return Err(Error::Record(format!(
                "record for device {} stored in partition of device {}",
                meta.device_id, self.device_id
            )));
        }
        self.last_refresh = Some(self.last_refresh.map_or(meta.round_tag, |r| r.max(meta.round_tag)));
        self.entries.insert(meta.batch_index, record);
        Ok(())
    }

    pub fn fetch(&self, batch_index: u32) -> Result<&ActivationRecord> {
        self.entries
            .get(&batch_index)
            .ok_or(Error::BufferMiss { device: self.device_id, batch: batch_index })
    }

    pub fn last_refresh(&self) -> Option<u32> {
        self.last_refresh
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &ActivationRecord> {
        self.entries.values()
    }

    pub fn total_bytes(&self) -> usize {
        self.entries.values().map(ActivationRecord::serialized_len).sum()
    }
}

/// One partition per device, each owned by that device's worker.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    switch: ActivationSwitch,
    partitions: Vec<BufferPartition>,
}

impl ReplayBuffer {
    pub fn new(devices: usize, switch: ActivationSwitch) -> Self {
        let partitions = (0..devices).map(|k| BufferPartition::new(k as u16)).collect();
        ReplayBuffer { switch, partitions }
    }

    pub fn switch(&self) -> ActivationSwitch {
        self.switch
    }

    pub fn partitions(&self) -> &[BufferPartition] {
        &self.partitions
    }

    pub fn partitions_mut(&mut self) -> &mut [BufferPartition] {
        &mut self.partitions
    }

    pub fn store(&mut self, record: ActivationRecord) -> Result<()> {
        let device = record.meta().device_id;
        let switch = self.switch;
        self.partition_mut(device)?.store(switch, record)
    }

    pub fn fetch(&self, device_id: u16, batch_index: u32) -> Result<&ActivationRecord> {
        self.partitions
            .get(device_id as usize)
            .ok_or(Error::BufferMiss { device: device_id, batch: batch_index })?
            .fetch(batch_index)
    }

    fn partition_mut(&mut self, device_id: u16) -> Result<&mut BufferPartition> {
        let n = self.partitions.len();
        self.partitions
            .get_mut(device_id as usize)
            .ok_or_else(|| Error::Record(format!("device {device_id} outside buffer of {n} partitions")))
    }

    pub fn len(&self) -> usize {
        self.partitions.iter().map(BufferPartition::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_bytes(&self) -> usize {
        self.partitions.iter().map(BufferPartition::total_bytes).sum()
    }

    /// Writes every record to `dir` as `{device}_{batch}.qact`.
    pub fn spill(&self, dir: impl AsRef<Path>) -> Result<usize> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut written = 0;
        for p in &self.partitions {
            for r in p.records() {
                let meta = r.meta();
                fs::write(dir.join(format!("{}_{}.qact", meta.device_id, meta.batch_index)), r.encode())?;
                written += 1;
            }
        }
        Ok(written)
    }

    /// Reloads a spilled directory. Files that do not end in `.qact` are ignored.
    pub fn load_spill(dir: impl AsRef<Path>, devices: usize, switch: ActivationSwitch) -> Result<Self> {
        let mut buffer = ReplayBuffer::new(devices, switch);
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        paths.sort();
        for path in paths.into_iter().filter(|p| p.extension().is_some_and(|e| e == "qact")) {
            buffer.store(ActivationRecord::decode(&fs::read(&path)?)?)?;
        }
        Ok(buffer)
    }
}

/// Mean over batches of the L2 distance between dequantized cached
/// activations and fresh full-precision ones.
pub fn buffer_distance_proxy<'a>(
    cached: impl IntoIterator<Item = &'a ActivationRecord>,
    fresh: &[Tensor<f32>],
) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0;
    let mut cached = cached.into_iter();
    for f in fresh {
        let c = cached
            .next()
            .ok_or_else(|| Error::Record(format!("{} fresh batches but only {n} cached", fresh.len())))?;
        total += c.to_tensor()?.l2_distance(f)?;
        n += 1;
    }
    if cached.next().is_some() {
        return Err(Error::Record("more cached batches than fresh ones".into()));
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}
