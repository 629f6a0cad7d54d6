//! Machine states and sensor identifiers.
//!
//! The state set is the ten machining operations plus `IDLE` and `OFF`. On the
//! wire a state is its integer code: `0` is `IDLE`, `1..=10` are operations and
//! `11` is `OFF`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Number of registered machine states.
pub const STATE_COUNT: usize = 12;

/// Number of machining operations.
pub const OPERATION_COUNT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct StateId(u8);

impl StateId {
    pub const IDLE: StateId = StateId(0);
    pub const OFF: StateId = StateId(11);

    pub fn new(code: u8) -> Result<Self, Error> {
        if (code as usize) < STATE_COUNT {
            Ok(StateId(code))
        } else {
            Err(Error::RejectedInput(format!("unknown state id {code}")))
        }
    }

    /// Operation `n` for `n` in `1..=10`.
    pub fn operation(n: u8) -> Result<Self, Error> {
        if (1..=OPERATION_COUNT as u8).contains(&n) {
            Ok(StateId(n))
        } else {
            Err(Error::RejectedInput(format!("{n} is not a machining operation")))
        }
    }

    pub fn code(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_operation(self) -> bool {
        (1..=OPERATION_COUNT as u8).contains(&self.0)
    }

    pub fn all() -> impl Iterator<Item = StateId> {
        (0..STATE_COUNT as u8).map(StateId)
    }

    pub fn operations() -> impl Iterator<Item = StateId> {
        (1..=OPERATION_COUNT as u8).map(StateId)
    }
}

impl TryFrom<u8> for StateId {
    type Error = Error;

    fn try_from(code: u8) -> Result<Self, Error> {
        StateId::new(code)
    }
}

impl From<StateId> for u8 {
    fn from(s: StateId) -> u8 {
        s.0
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            StateId::IDLE => f.write_str("IDLE"),
            StateId::OFF => f.write_str("OFF"),
            StateId(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for StateId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "IDLE" | "idle" => Ok(StateId::IDLE),
            "OFF" | "off" => Ok(StateId::OFF),
            other => other
                .parse::<u8>()
                .map_err(|_| Error::RejectedInput(format!("unknown state `{other}`")))
                .and_then(StateId::new),
        }
    }
}

/// The eleven monitored sensor channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Axis1RelPos,
    Axis2RelPos,
    Axis3RelPos,
    Axis4RelPos,
    Axis1ServoLoad,
    Axis2ServoLoad,
    Axis3ServoLoad,
    Axis4ServoLoad,
    FeedRate,
    SpindleSpeed,
    ConvertedSpindleSpeed,
}

impl SensorKind {
    pub const ALL: [SensorKind; 11] = [
        SensorKind::Axis1RelPos,
        SensorKind::Axis2RelPos,
        SensorKind::Axis3RelPos,
        SensorKind::Axis4RelPos,
        SensorKind::Axis1ServoLoad,
        SensorKind::Axis2ServoLoad,
        SensorKind::Axis3ServoLoad,
        SensorKind::Axis4ServoLoad,
        SensorKind::FeedRate,
        SensorKind::SpindleSpeed,
        SensorKind::ConvertedSpindleSpeed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SensorKind::Axis1RelPos => "axis1_rel_pos",
            SensorKind::Axis2RelPos => "axis2_rel_pos",
            SensorKind::Axis3RelPos => "axis3_rel_pos",
            SensorKind::Axis4RelPos => "axis4_rel_pos",
            SensorKind::Axis1ServoLoad => "axis1_servo_load",
            SensorKind::Axis2ServoLoad => "axis2_servo_load",
            SensorKind::Axis3ServoLoad => "axis3_servo_load",
            SensorKind::Axis4ServoLoad => "axis4_servo_load",
            SensorKind::FeedRate => "feed_rate",
            SensorKind::SpindleSpeed => "spindle_speed",
            SensorKind::ConvertedSpindleSpeed => "converted_spindle_speed",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            SensorKind::Axis1RelPos
            | SensorKind::Axis2RelPos
            | SensorKind::Axis3RelPos
            | SensorKind::Axis4RelPos => "mm",
            SensorKind::Axis1ServoLoad
            | SensorKind::Axis2ServoLoad
            | SensorKind::Axis3ServoLoad
            | SensorKind::Axis4ServoLoad => "%",
            SensorKind::FeedRate => "mm/min",
            SensorKind::SpindleSpeed | SensorKind::ConvertedSpindleSpeed => "rpm",
        }
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SensorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        SensorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::RejectedInput(format!("unknown sensor `{s}`")))
    }
}
