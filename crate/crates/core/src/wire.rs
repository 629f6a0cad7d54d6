//! Newline-delimited JSON wire format and the engine's alarm log records.
//!
//! ```text
//! {"t":"frame","ts":1496275200,"machine":"cnc-01","op":7,"r":{"axis1_rel_pos":120.5}}
//! {"t":"trans","ts":1496275260,"machine":"cnc-01","from":7,"to":8,"by":"operator"}
//! {"t":"fb","ts":1496275290,"alarm_id":"a-0042","d":"rejected"}
//! {"t":"malarm","ts":1496275300,"machine":"cnc-01","code":"SV0401"}
//! ```

use serde::{Deserialize, Serialize};

use crate::adaptation::ModelEvent;
use crate::alarm::{Alarm, Disposition};
use crate::error::{Error, Result};
use crate::event::{Event, MachineAlarm, OperatorFeedback, TelemetryFrame, TransitionRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t")]
pub enum WireMessage {
    #[serde(rename = "frame")]
    Frame(TelemetryFrame),
    #[serde(rename = "trans")]
    Transition(TransitionRequest),
    #[serde(rename = "fb")]
    Feedback(OperatorFeedback),
    #[serde(rename = "malarm")]
    MachineAlarm(MachineAlarm),
}

impl WireMessage {
    pub fn ts(&self) -> i64 {
        match self {
            WireMessage::Frame(f) => f.ts,
            WireMessage::Transition(t) => t.ts,
            WireMessage::Feedback(f) => f.ts,
            WireMessage::MachineAlarm(a) => a.ts,
        }
    }

    pub fn machine_id(&self) -> Option<&str> {
        match self {
            WireMessage::Frame(f) => Some(&f.machine_id),
            WireMessage::Transition(t) => Some(&t.machine_id),
            WireMessage::Feedback(f) => f.machine_id.as_deref(),
            WireMessage::MachineAlarm(a) => Some(&a.machine_id),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("wire messages always serialise")
    }
}

impl From<WireMessage> for Event {
    fn from(m: WireMessage) -> Event {
        match m {
            WireMessage::Frame(f) => Event::Frame(f),
            WireMessage::Transition(t) => Event::Transition(t),
            WireMessage::Feedback(f) => Event::Feedback(f),
            WireMessage::MachineAlarm(a) => Event::MachineAlarm(a),
        }
    }
}

/// Strict parse of one wire line. Errors carry serde's line/column position.
pub fn parse_message(line: &[u8]) -> Result<WireMessage> {
    let msg: WireMessage = serde_json::from_slice(line).map_err(|e| locate(line, e))?;
    match &msg {
        WireMessage::Frame(f) => {
            if let Some((k, v)) = f.readings.iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::RejectedInput(format!("non-finite reading {v} for {k}")));
            }
        }
        WireMessage::Feedback(f) if f.alarm_id.is_empty() => {
            return Err(Error::RejectedInput("empty alarm_id".into()));
        }
        _ => {}
    }
    if msg.machine_id().is_some_and(str::is_empty) {
        return Err(Error::RejectedInput("empty machine id".into()));
    }
    Ok(msg)
}

/// Tagged-enum errors lose serde's position; recover a column from the
/// offending token when the message names one.
fn locate(line: &[u8], err: serde_json::Error) -> Error {
    let msg = err.to_string();
    if msg.contains(" column ") {
        return Error::RejectedInput(msg);
    }
    let column = msg
        .split('`')
        .nth(1)
        .filter(|tok| !tok.is_empty())
        .and_then(|tok| {
            let needle = format!("\"{tok}\"");
            line.windows(needle.len()).position(|w| w == needle.as_bytes())
        });
    match column {
        Some(c) => Error::RejectedInput(format!("{msg} at column {}", c + 1)),
        None => Error::RejectedInput(msg),
    }
}

/// One line of the append-only alarm log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
pub enum LogRecord {
    Alarm(Alarm),
    Disposition {
        ts: i64,
        alarm_id: String,
        d: Disposition,
        reward_delta: f64,
    },
    Model(ModelEvent),
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("log records always serialise")
    }

    pub fn parse(line: &str) -> Result<LogRecord> {
        serde_json::from_str(line).map_err(|e| Error::RejectedInput(e.to_string()))
    }
}
