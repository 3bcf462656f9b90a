use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Device to server.
    Up,
    /// Server to device.
    Down,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Activation,
    Gradient,
    ModelUp,
    ModelDown,
    Labels,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficRecord {
    pub round: u32,
    pub device: u16,
    pub direction: Direction,
    pub purpose: Purpose,
    pub bytes: u64,
}

/// Selects ledger records; `None` fields match anything.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Query {
    pub round: Option<u32>,
    pub device: Option<u16>,
    pub direction: Option<Direction>,
    pub purpose: Option<Purpose>,
}

impl Query {
    pub fn round(mut self, round: u32) -> Self {
        self.round = Some(round);
        self
    }

    pub fn device(mut self, device: u16) -> Self {
        self.device = Some(device);
        self
    }

    pub fn direction(mut self, direction: Direction) -> Self {
        self.direction = Some(direction);
        self
    }

    pub fn purpose(mut self, purpose: Purpose) -> Self {
        self.purpose = Some(purpose);
        self
    }

    pub fn matches(&self, r: &TrafficRecord) -> bool {
        self.round.is_none_or(|v| v == r.round)
            && self.device.is_none_or(|v| v == r.device)
            && self.direction.is_none_or(|v| v == r.direction)
            && self.purpose.is_none_or(|v| v == r.purpose)
    }
}

/// Append-only log of every byte exchanged between devices and the server.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrafficLedger {
    records: Vec<TrafficRecord>,
}

impl TrafficLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, round: u32, device: u16, direction: Direction, purpose: Purpose, bytes: u64) {
        self.records.push(TrafficRecord { round, device, direction, purpose, bytes });
    }

    /// Appends a worker's shard, preserving its order.
    pub fn merge(&mut self, shard: TrafficLedger) {
        self.records.extend(shard.records);
    }

    pub fn records(&self) -> &[TrafficRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total(&self, query: Query) -> u64 {
        self.records.iter().filter(|r| query.matches(r)).map(|r| r.bytes).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_by_key_subset() {
        let mut l = TrafficLedger::new();
        l.record(0, 0, Direction::Up, Purpose::Activation, 10);
        l.record(0, 1, Direction::Up, Purpose::Labels, 2);
        l.record(1, 0, Direction::Down, Purpose::Gradient, 7);
        let mut shard = TrafficLedger::new();
        shard.record(1, 1, Direction::Up, Purpose::ModelUp, 5);
        l.merge(shard);
        assert_eq!(l.total(Query::default()), 24);
        assert_eq!(l.total(Query::default().round(1)), 12);
        assert_eq!(l.total(Query::default().device(0).direction(Direction::Up)), 10);
        assert_eq!(l.total(Query::default().purpose(Purpose::ModelUp)), 5);
        assert_eq!(l.records().last().unwrap().device, 1);
    }
}
