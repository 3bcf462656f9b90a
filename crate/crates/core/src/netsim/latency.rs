//! First-order latency model: serial compute and transfer, no queuing or loss.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ledger::Direction;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkProfile {
    pub name: String,
    pub uplink_mbps: f64,
    pub downlink_mbps: f64,
}

impl NetworkProfile {
    pub fn new(name: impl Into<String>, uplink_mbps: f64, downlink_mbps: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(uplink_mbps) || !ok(downlink_mbps) {
            return Err(Error::Network(format!("bandwidth {uplink_mbps}/{downlink_mbps} Mbps must be positive")));
        }
        Ok(NetworkProfile { name: name.into(), uplink_mbps, downlink_mbps })
    }

    pub fn wifi() -> Self {
        NetworkProfile { name: "wifi".into(), uplink_mbps: 50.0, downlink_mbps: 50.0 }
    }

    pub fn lte() -> Self {
        NetworkProfile { name: "4g".into(), uplink_mbps: 10.0, downlink_mbps: 42.0 }
    }

    pub fn umts() -> Self {
        NetworkProfile { name: "3g".into(), uplink_mbps: 3.0, downlink_mbps: 6.0 }
    }

    pub fn presets() -> [NetworkProfile; 3] {
        [Self::wifi(), Self::lte(), Self::umts()]
    }

    pub fn mbps(&self, direction: Direction) -> f64 {
        match direction {
            Direction::Up => self.uplink_mbps,
            Direction::Down => self.downlink_mbps,
        }
    }
}

/// Accepts `wifi`, `4g`, `3g` or an explicit `UP/DOWN` Mbps pair such as `10/42`.
impl FromStr for NetworkProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wifi" | "wi-fi" => Ok(Self::wifi()),
            "4g" | "lte" => Ok(Self::lte()),
            "3g" => Ok(Self::umts()),
            other => {
                let (up, down) = other
                    .split_once('/')
                    .ok_or_else(|| Error::Network(format!("unknown profile {s:?}; use wifi, 4g, 3g or UP/DOWN")))?;
                let parse = |v: &str| {
                    v.trim().parse::<f64>().map_err(|_| Error::Network(format!("bad bandwidth {v:?} in {s:?}")))
                };
                NetworkProfile::new(s, parse(up)?, parse(down)?)
            }
        }
    }
}

impl fmt::Display for NetworkProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}/{} Mbps)", self.name, self.uplink_mbps, self.downlink_mbps)
    }
}

/// Seconds to move `bytes` in `direction`.
pub fn transfer_time(bytes: u64, direction: Direction, profile: &NetworkProfile) -> f64 {
    bytes as f64 * 8.0 / (profile.mbps(direction) * 1e6)
}

/// Compute throughput in units (multiply-accumulates) per second.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Speeds {
    pub device: f64,
    pub server: f64,
}

impl Speeds {
    pub fn new(device: f64, server: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(device) || !ok(server) {
            return Err(Error::Network(format!("compute speeds {device}/{server} must be positive")));
        }
        Ok(Speeds { device, server })
    }
}

impl Default for Speeds {
    /// A phone-class device against a GPU-class server.
    fn default() -> Self {
        Speeds { device: 5e9, server: 5e11 }
    }
}

/// Work of one device in one round, as fed to [`round_latency`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DeviceWork {
    pub up_bytes: u64,
    pub down_bytes: u64,
    pub device_units: u64,
    pub server_units: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct DeviceLatency {
    pub device_compute_s: f64,
    pub comm_s: f64,
    pub server_compute_s: f64,
}

impl DeviceLatency {
    pub fn total(&self) -> f64 {
        self.device_compute_s + self.comm_s + self.server_compute_s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatencyReport {
    pub devices: Vec<DeviceLatency>,
}

impl LatencyReport {
    /// Devices run in parallel; the round ends with the slowest.
    pub fn round_s(&self) -> f64 {
        self.devices.iter().map(DeviceLatency::total).fold(0.0, f64::max)
    }

    pub fn comm_s(&self) -> f64 {
        self.devices.iter().map(|d| d.comm_s).sum()
    }

    pub fn compute_s(&self) -> f64 {
        self.devices.iter().map(|d| d.device_compute_s + d.server_compute_s).sum()
    }

    /// Fraction of all device-seconds spent communicating.
    pub fn comm_share(&self) -> f64 {
        let total = self.comm_s() + self.compute_s();
        if total == 0.0 {
            0.0
        } else {
            self.comm_s() / total
        }
    }
}

pub fn round_latency(work: &[DeviceWork], speeds: Speeds, profile: &NetworkProfile) -> Result<LatencyReport> {
    Speeds::new(speeds.device, speeds.server)?;
    NetworkProfile::new(profile.name.clone(), profile.uplink_mbps, profile.downlink_mbps)?;
    let devices = work
        .iter()
        .map(|w| DeviceLatency {
            device_compute_s: w.device_units as f64 / speeds.device,
            comm_s: transfer_time(w.up_bytes, Direction::Up, profile) + transfer_time(w.down_bytes, Direction::Down, profile),
            server_compute_s: w.server_units as f64 / speeds.server,
        })
        .collect();
    Ok(LatencyReport { devices })
}
