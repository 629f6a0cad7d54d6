//! Safety-compliance engine for human-in-the-loop CNC operation.
//!
//! Operator-instructed state changes are checked against a learned trigram
//! transition model and per-operation sensor statistics. Alarms warn the
//! operator; repeated rejections of the same alarm pattern spawn a new model
//! instance that learns the changed process, and stale instances are evicted
//! least-recently-used first.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod alarm;
pub mod buffer;
pub mod engine;
pub mod error;
pub mod eval;
pub mod event;
pub mod replay;
pub mod sim;
pub mod snapshot;
pub mod state;
pub mod stats;
pub mod transition;
pub mod wire;

pub use alarm::{Alarm, AlarmDetail, AlarmReason, AlarmStatus, Disposition, Signature};
pub use engine::{Engine, EngineConfig, Status};
pub use error::{Error, Result};
pub use event::{Event, MachineAlarm, OperatorFeedback, RequestedBy, TelemetryFrame, TransitionRequest};
pub use state::{SensorKind, StateId};
pub use wire::{parse_message, LogRecord, WireMessage};
