//! Traffic accounting, the analytic cost model and simulated network latency.

mod cost;
mod latency;
mod ledger;

pub use cost::{
    actionfed_batch_bytes, actionfed_round, comm_bytes_per_round, computation_units, cost_ratio, CostReport,
    CostSetting, DeviceCost, Method, ModelSizes, BYTES_PER_PARAM, BYTES_PER_RAW_ELEMENT, GIB,
};
pub use latency::{
    round_latency, transfer_time, DeviceLatency, DeviceWork, LatencyReport, NetworkProfile, Speeds,
};
pub use ledger::{Direction, Purpose, Query, TrafficLedger, TrafficRecord};

impl From<DeviceCost> for DeviceWork {
    fn from(c: DeviceCost) -> Self {
        DeviceWork {
            up_bytes: c.up_bytes,
            down_bytes: c.down_bytes,
            device_units: c.device_units,
            server_units: c.server_units,
        }
    }
}
