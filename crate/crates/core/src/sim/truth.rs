//! Ground truth written next to a simulated run. The engine never sees it;
//! the operator agent and the evaluator do.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alarm::{Alarm, AlarmDetail, AlarmReason};
use crate::error::{Error, Result};
use crate::state::{SensorKind, StateId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    IllegalTransition,
    TrayNotReturned,
    AbnormalSwitchOff,
    Overrun,
}

impl FaultKind {
    pub fn name(self) -> &'static str {
        match self {
            FaultKind::IllegalTransition => "illegal_transition",
            FaultKind::TrayNotReturned => "tray_not_returned",
            FaultKind::AbnormalSwitchOff => "abnormal_switch_off",
            FaultKind::Overrun => "overrun",
        }
    }

    /// Alarm reasons that count as detecting this kind of fault.
    fn detected_by(self, reason: AlarmReason) -> bool {
        use AlarmReason::*;
        match self {
            FaultKind::IllegalTransition => matches!(reason, ImplausibleTransition | DurationAbnormal),
            FaultKind::TrayNotReturned => matches!(reason, ProtectiveDistance | SensorOutlier),
            FaultKind::AbnormalSwitchOff => reason == ImplausibleTransition,
            FaultKind::Overrun => reason == DurationAbnormal,
        }
    }
}

/// One injected fault. Alarms raised within `[start, end]` on one of the
/// fault's operations with a matching reason detect it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultRecord {
    pub kind: FaultKind,
    /// Operation the fault is attributed to in reports.
    pub op: StateId,
    pub start: i64,
    pub end: i64,
    pub from: StateId,
    pub to: StateId,
}

impl FaultRecord {
    pub fn matches(&self, alarm: &Alarm) -> bool {
        if alarm.ts < self.start || alarm.ts > self.end || !self.kind.detected_by(alarm.reason()) {
            return false;
        }
        match (self.kind, &alarm.detail) {
            (FaultKind::TrayNotReturned, AlarmDetail::SensorOutlier { sensor, .. }) => {
                *sensor == SensorKind::Axis1RelPos && alarm.operation == self.op
            }
            (FaultKind::IllegalTransition, _) => alarm.operation == self.from || alarm.operation == self.to,
            _ => alarm.operation == self.op,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftWindow {
    pub start: i64,
    pub ops: BTreeSet<StateId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub machine: String,
    pub faults: Vec<FaultRecord>,
    pub drift: Option<DriftWindow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "label", content = "kind", rename_all = "snake_case")]
pub enum Label {
    TrueFault(FaultKind),
    DriftInduced,
    Clean,
}

impl GroundTruth {
    /// Index of the first fault the alarm detects, if any.
    pub fn matching_fault(&self, alarm: &Alarm) -> Option<usize> {
        self.faults.iter().position(|f| f.matches(alarm))
    }

    pub fn label_alarm(&self, alarm: &Alarm) -> Label {
        if let Some(i) = self.matching_fault(alarm) {
            return Label::TrueFault(self.faults[i].kind);
        }
        let drifted = self.drift.as_ref().is_some_and(|d| {
            alarm.ts >= d.start
                && d.ops.contains(&alarm.operation)
                && matches!(alarm.reason(), AlarmReason::DurationAbnormal | AlarmReason::SensorOutlier)
        });
        if drifted {
            Label::DriftInduced
        } else {
            Label::Clean
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("ground truth always serialises");
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::RejectedInput(format!("ground truth: {e}")))
    }
}
