//! Edge-side buffering: fast-changing channels are forwarded every second,
//! slow channels are held and released with the first frame at or after each
//! flush boundary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::TelemetryFrame;
use crate::state::{SensorKind, StateId};
use crate::wire::WireMessage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyClass {
    HighFrequency,
    LowFrequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BufferPolicy {
    pub classes: BTreeMap<SensorKind, FrequencyClass>,
    pub flush_interval_seconds: i64,
}

impl Default for BufferPolicy {
    fn default() -> Self {
        let classes = SensorKind::ALL
            .into_iter()
            .map(|k| {
                let class = if k == SensorKind::ConvertedSpindleSpeed {
                    FrequencyClass::LowFrequency
                } else {
                    FrequencyClass::HighFrequency
                };
                (k, class)
            })
            .collect();
        BufferPolicy {
            classes,
            flush_interval_seconds: 60,
        }
    }
}

impl BufferPolicy {
    pub fn validate(&self) -> Result<()> {
        if let Some(k) = SensorKind::ALL.iter().find(|k| !self.classes.contains_key(k)) {
            return Err(Error::Config(format!("sensor {k} has no frequency class")));
        }
        if self.flush_interval_seconds <= 0 {
            return Err(Error::Config("flush interval must be positive".into()));
        }
        Ok(())
    }

    pub fn class(&self, sensor: SensorKind) -> FrequencyClass {
        self.classes
            .get(&sensor)
            .copied()
            .unwrap_or(FrequencyClass::HighFrequency)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Pending {
    operation: Option<StateId>,
    readings: BTreeMap<SensorKind, f64>,
    next_flush: Option<i64>,
}

#[derive(Debug, Clone)]
pub struct EdgeBuffer {
    policy: BufferPolicy,
    pending: BTreeMap<String, Pending>,
}

impl EdgeBuffer {
    pub fn new(policy: BufferPolicy) -> Result<Self> {
        policy.validate()?;
        Ok(EdgeBuffer {
            policy,
            pending: BTreeMap::new(),
        })
    }

    pub fn policy(&self) -> &BufferPolicy {
        &self.policy
    }

    fn boundary_after(&self, ts: i64) -> i64 {
        let i = self.policy.flush_interval_seconds;
        (ts.div_euclid(i) + 1) * i
    }

    /// Returns the messages released to the engine as a result of `msg`
    /// arriving at `now_ts`. Low-frequency values are kept as the latest value
    /// per channel.
    pub fn buffer_and_forward(&mut self, msg: WireMessage, now_ts: i64) -> Vec<WireMessage> {
        let frame = match msg {
            WireMessage::Frame(f) => f,
            other => return vec![other],
        };
        let (high, low): (BTreeMap<_, _>, BTreeMap<_, _>) = frame
            .readings
            .iter()
            .partition(|(k, _)| self.policy.class(**k) == FrequencyClass::HighFrequency);

        let first_boundary = self.boundary_after(now_ts);
        let slot = self.pending.entry(frame.machine_id.clone()).or_default();
        if !low.is_empty() {
            // held values describe one operation; a new one supersedes them
            if slot.operation.is_some_and(|op| op != frame.operation) {
                slot.readings.clear();
            }
            slot.readings.extend(low);
            slot.operation = Some(frame.operation);
            slot.next_flush.get_or_insert(first_boundary);
        }
        let due = slot.next_flush.is_some_and(|b| now_ts >= b);

        let mut readings = high;
        if due {
            readings.extend(std::mem::take(&mut slot.readings));
            slot.next_flush = None;
            slot.operation = None;
        }
        if readings.is_empty() {
            return Vec::new();
        }
        vec![WireMessage::Frame(TelemetryFrame {
            readings,
            ..frame
        })]
    }

    /// Releases every held value immediately (end of stream).
    pub fn flush(&mut self, now_ts: i64) -> Vec<WireMessage> {
        let mut out = Vec::new();
        for (machine, slot) in &mut self.pending {
            if slot.readings.is_empty() {
                continue;
            }
            out.push(WireMessage::Frame(TelemetryFrame {
                ts: now_ts,
                machine_id: machine.clone(),
                operation: slot.operation.unwrap_or(StateId::IDLE),
                readings: std::mem::take(&mut slot.readings),
            }));
            slot.next_flush = None;
            slot.operation = None;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(ts: i64, readings: &[(SensorKind, f64)]) -> WireMessage {
        WireMessage::Frame(TelemetryFrame {
            ts,
            machine_id: "cnc-01".into(),
            operation: StateId::new(3).unwrap(),
            readings: readings.iter().copied().collect(),
        })
    }

    #[test]
    fn high_frequency_forwarded_same_tick() {
        let mut b = EdgeBuffer::new(BufferPolicy::default()).unwrap();
        let out = b.buffer_and_forward(frame(10, &[(SensorKind::FeedRate, 5.0)]), 10);
        assert_eq!(out, vec![frame(10, &[(SensorKind::FeedRate, 5.0)])]);
    }

    #[test]
    fn minute_of_low_frequency_released_once() {
        // oracle: readings at 0..59 are held; the boundary is 60
        let mut b = EdgeBuffer::new(BufferPolicy::default()).unwrap();
        let mut released = vec![];
        for ts in 0..=60 {
            let msg = frame(ts, &[(SensorKind::ConvertedSpindleSpeed, ts as f64)]);
            released.extend(b.buffer_and_forward(msg, ts));
        }
        assert_eq!(released.len(), 1);
        assert_eq!(released[0], frame(60, &[(SensorKind::ConvertedSpindleSpeed, 60.0)]));
    }

    #[test]
    fn merged_into_boundary_frame() {
        let mut b = EdgeBuffer::new(BufferPolicy::default()).unwrap();
        let mut released = vec![];
        for ts in 30..=125 {
            let msg = frame(
                ts,
                &[(SensorKind::FeedRate, 1.0), (SensorKind::ConvertedSpindleSpeed, ts as f64)],
            );
            released.extend(b.buffer_and_forward(msg, ts));
        }
        assert_eq!(released.len(), 96);
        let merged: Vec<i64> = released
            .iter()
            .filter_map(|m| match m {
                WireMessage::Frame(f) if f.readings.len() == 2 => Some(f.ts),
                _ => None,
            })
            .collect();
        assert_eq!(merged, vec![60, 120]);
        let ts: Vec<i64> = released.iter().map(WireMessage::ts).collect();
        assert!(ts.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn operation_change_supersedes_held_values() {
        let mut b = EdgeBuffer::new(BufferPolicy::default()).unwrap();
        b.buffer_and_forward(frame(10, &[(SensorKind::ConvertedSpindleSpeed, 1.0)]), 10);
        let next_op = WireMessage::Frame(TelemetryFrame {
            ts: 20,
            machine_id: "cnc-01".into(),
            operation: StateId::new(4).unwrap(),
            readings: [(SensorKind::ConvertedSpindleSpeed, 2.0)].into_iter().collect(),
        });
        assert!(b.buffer_and_forward(next_op, 20).is_empty());
        match &b.flush(30)[..] {
            [WireMessage::Frame(f)] => {
                assert_eq!(f.operation, StateId::new(4).unwrap());
                assert_eq!(f.readings[&SensorKind::ConvertedSpindleSpeed], 2.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_flush() {
        let mut b = EdgeBuffer::new(BufferPolicy::default()).unwrap();
        assert!(b.flush(100).is_empty());
        b.buffer_and_forward(frame(1, &[(SensorKind::ConvertedSpindleSpeed, 9.0)]), 1);
        assert_eq!(b.flush(5).len(), 1);
        assert!(b.flush(6).is_empty());
    }

    #[test]
    fn every_sensor_needs_a_class() {
        let mut p = BufferPolicy::default();
        p.classes.remove(&SensorKind::FeedRate);
        assert!(EdgeBuffer::new(p).is_err());
    }
}
