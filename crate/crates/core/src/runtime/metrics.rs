use std::io::Write;

use serde::Serialize;

use super::{Mode, RoundResult};
use crate::error::Result;

pub const METRICS_HEADER: &str =
    "round,device,mode,server_loss,test_acc,bytes_up,bytes_down,epsilon_hat,delta_hat,sim_latency_s";

/// One row of the metrics CSV. `epsilon_hat` and `delta_hat` are empty unless
/// diagnostics are enabled.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub round: u32,
    pub device: u16,
    pub mode: Mode,
    pub server_loss: f64,
    pub test_acc: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub epsilon_hat: Option<f64>,
    pub delta_hat: Option<f64>,
    pub sim_latency_s: f64,
}

impl MetricRow {
    pub fn from_round(r: &RoundResult, mode: Mode) -> Vec<MetricRow> {
        (0..r.server_loss.len())
            .map(|k| MetricRow {
                round: r.round,
                device: k as u16,
                mode,
                server_loss: r.server_loss[k],
                test_acc: r.test_acc,
                bytes_up: r.bytes_up[k],
                bytes_down: r.bytes_down[k],
                epsilon_hat: r.diagnostics.as_ref().map(|d| d.eps[k]),
                delta_hat: r.diagnostics.as_ref().map(|d| d.delta[k]),
                sim_latency_s: r.latency.devices[k].total(),
            })
            .collect()
    }
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], mut out: W) -> Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.round,
            r.device,
            r.mode.as_str(),
            r.server_loss,
            r.test_acc,
            r.bytes_up,
            r.bytes_down,
            opt(r.epsilon_hat),
            opt(r.delta_hat),
            r.sim_latency_s
        )?;
    }
    Ok(())
}
