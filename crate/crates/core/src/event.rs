//! Inputs consumed by the engine's ordered event loop.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::alarm::Disposition;
use crate::state::{SensorKind, StateId};

/// One second of readings from one machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelemetryFrame {
    pub ts: i64,
    #[serde(rename = "machine")]
    pub machine_id: String,
    #[serde(rename = "op")]
    pub operation: StateId,
    #[serde(rename = "r")]
    pub readings: BTreeMap<SensorKind, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestedBy {
    Operator,
    Program,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRequest {
    pub ts: i64,
    #[serde(rename = "machine")]
    pub machine_id: String,
    #[serde(rename = "from")]
    pub from_op: StateId,
    #[serde(rename = "to")]
    pub to_op: StateId,
    #[serde(rename = "by")]
    pub requested_by: RequestedBy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorFeedback {
    pub ts: i64,
    pub alarm_id: String,
    #[serde(rename = "d")]
    pub disposition: Disposition,
    #[serde(rename = "machine", default, skip_serializing_if = "Option::is_none")]
    pub machine_id: Option<String>,
}

/// Controller-generated alarm forwarded untouched; the code is opaque.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineAlarm {
    pub ts: i64,
    #[serde(rename = "machine")]
    pub machine_id: String,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Frame(TelemetryFrame),
    Transition(TransitionRequest),
    Feedback(OperatorFeedback),
    MachineAlarm(MachineAlarm),
    /// Advances the clock without input: drives decay and retrain deadlines.
    Tick(i64),
}

impl Event {
    pub fn ts(&self) -> i64 {
        match self {
            Event::Frame(f) => f.ts,
            Event::Transition(t) => t.ts,
            Event::Feedback(f) => f.ts,
            Event::MachineAlarm(a) => a.ts,
            Event::Tick(ts) => *ts,
        }
    }

    pub fn machine_id(&self) -> Option<&str> {
        match self {
            Event::Frame(f) => Some(&f.machine_id),
            Event::Transition(t) => Some(&t.machine_id),
            Event::Feedback(f) => f.machine_id.as_deref(),
            Event::MachineAlarm(a) => Some(&a.machine_id),
            Event::Tick(_) => None,
        }
    }
}
