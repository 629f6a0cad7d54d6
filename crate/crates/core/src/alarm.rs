//! Alarms, operator dispositions and the per-signature reward ledger.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::state::{SensorKind, StateId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmReason {
    ImplausibleTransition,
    SensorOutlier,
    DurationAbnormal,
    ProtectiveDistance,
    StateDesync,
}

impl AlarmReason {
    pub const ALL: [AlarmReason; 5] = [
        AlarmReason::ImplausibleTransition,
        AlarmReason::SensorOutlier,
        AlarmReason::DurationAbnormal,
        AlarmReason::ProtectiveDistance,
        AlarmReason::StateDesync,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlarmReason::ImplausibleTransition => "implausible_transition",
            AlarmReason::SensorOutlier => "sensor_outlier",
            AlarmReason::DurationAbnormal => "duration_abnormal",
            AlarmReason::ProtectiveDistance => "protective_distance",
            AlarmReason::StateDesync => "state_desync",
        }
    }
}

impl fmt::Display for AlarmReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlarmReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        AlarmReason::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::RejectedInput(format!("unknown alarm reason `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum AlarmDetail {
    ImplausibleTransition {
        probability: f64,
        tau: f64,
        trigram_count: f64,
        context_count: f64,
    },
    SensorOutlier {
        sensor: SensorKind,
        value: f64,
        lower: f64,
        upper: f64,
    },
    DurationAbnormal {
        elapsed: f64,
        lower: f64,
        upper: f64,
    },
    ProtectiveDistance {
        distance: f64,
        d_safe: f64,
    },
    StateDesync {
        expected: StateId,
        got: StateId,
    },
}

impl AlarmDetail {
    pub fn reason(&self) -> AlarmReason {
        match self {
            AlarmDetail::ImplausibleTransition { .. } => AlarmReason::ImplausibleTransition,
            AlarmDetail::SensorOutlier { .. } => AlarmReason::SensorOutlier,
            AlarmDetail::DurationAbnormal { .. } => AlarmReason::DurationAbnormal,
            AlarmDetail::ProtectiveDistance { .. } => AlarmReason::ProtectiveDistance,
            AlarmDetail::StateDesync { .. } => AlarmReason::StateDesync,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    Accepted,
    Rejected,
    Overlooked,
}

impl Disposition {
    pub fn name(self) -> &'static str {
        match self {
            Disposition::Accepted => "accepted",
            Disposition::Rejected => "rejected",
            Disposition::Overlooked => "overlooked",
        }
    }
}

impl FromStr for Disposition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim() {
            "accepted" => Ok(Disposition::Accepted),
            "rejected" => Ok(Disposition::Rejected),
            "overlooked" => Ok(Disposition::Overlooked),
            other => Err(Error::RejectedInput(format!("unknown disposition `{other}`"))),
        }
    }
}

impl fmt::Display for Disposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmStatus {
    Open,
    Accepted,
    Rejected,
    Overlooked,
}

impl From<Disposition> for AlarmStatus {
    fn from(d: Disposition) -> Self {
        match d {
            Disposition::Accepted => AlarmStatus::Accepted,
            Disposition::Rejected => AlarmStatus::Rejected,
            Disposition::Overlooked => AlarmStatus::Overlooked,
        }
    }
}

/// `(from, to, reason)` key under which rejections are tracked. Alarms raised
/// on frames inside an operation use that operation for both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Signature {
    pub from: StateId,
    pub to: StateId,
    pub reason: AlarmReason,
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}>{}:{}", self.from.code(), self.to.code(), self.reason)
    }
}

impl FromStr for Signature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let bad = || Error::RejectedInput(format!("malformed signature `{s}`"));
        let (states, reason) = s.split_once(':').ok_or_else(bad)?;
        let (from, to) = states.split_once('>').ok_or_else(bad)?;
        let code = |x: &str| x.parse::<u8>().map_err(|_| bad()).and_then(StateId::new);
        Ok(Signature {
            from: code(from)?,
            to: code(to)?,
            reason: reason.parse()?,
        })
    }
}

impl From<Signature> for String {
    fn from(s: Signature) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Signature {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alarm {
    pub alarm_id: String,
    pub ts: i64,
    pub machine: String,
    /// Operation the alarm is attributed to in reports.
    #[serde(rename = "op")]
    pub operation: StateId,
    pub from: StateId,
    pub to: StateId,
    #[serde(flatten)]
    pub detail: AlarmDetail,
    pub status: AlarmStatus,
}

impl Alarm {
    pub fn reason(&self) -> AlarmReason {
        self.detail.reason()
    }

    pub fn signature(&self) -> Signature {
        Signature {
            from: self.from,
            to: self.to,
            reason: self.reason(),
        }
    }

    pub fn is_open(&self) -> bool {
        self.status == AlarmStatus::Open
    }

    pub fn message(&self) -> String {
        match &self.detail {
            AlarmDetail::ImplausibleTransition { probability, tau, .. } => format!(
                "transition {} -> {} has probability {probability:.4} (threshold {tau})",
                self.from, self.to
            ),
            AlarmDetail::SensorOutlier { sensor, value, lower, upper } => format!(
                "{sensor} = {value} {} outside [{lower:.3}, {upper:.3}] in operation {}",
                sensor.unit(),
                self.operation
            ),
            AlarmDetail::DurationAbnormal { elapsed, lower, upper } => format!(
                "operation {} ran {elapsed} s, expected [{lower:.1}, {upper:.1}] s",
                self.from
            ),
            AlarmDetail::ProtectiveDistance { distance, d_safe } => format!(
                "axis1 distance {distance} mm below protective minimum {d_safe} mm in operation {}",
                self.operation
            ),
            AlarmDetail::StateDesync { expected, got } => {
                format!("transition requested from {got} but machine is in {expected}")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub reward: f64,
    pub streak: u32,
    pub accepted: u64,
    pub rejected: u64,
    pub overlooked: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackEffect {
    pub signature: Signature,
    pub reward_delta: f64,
    pub streak: u32,
    /// Set when the rejection streak reached the adaptation threshold.
    pub adaptation_signal: bool,
}

/// Cumulative reward and consecutive-rejection streak per signature.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardLedger {
    entries: BTreeMap<Signature, LedgerEntry>,
}

impl RewardLedger {
    pub fn apply(&mut self, signature: Signature, disposition: Disposition, n_rej: u32) -> FeedbackEffect {
        let e = self.entries.entry(signature).or_default();
        let reward_delta = match disposition {
            Disposition::Accepted => {
                e.accepted += 1;
                e.streak = 0;
                1.0
            }
            Disposition::Rejected => {
                e.rejected += 1;
                e.streak += 1;
                -1.0
            }
            Disposition::Overlooked => {
                e.overlooked += 1;
                0.0
            }
        };
        e.reward += reward_delta;
        FeedbackEffect {
            signature,
            reward_delta,
            streak: e.streak,
            adaptation_signal: disposition == Disposition::Rejected && e.streak >= n_rej,
        }
    }

    pub fn get(&self, signature: &Signature) -> Option<&LedgerEntry> {
        self.entries.get(signature)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Signature, &LedgerEntry)> {
        self.entries.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig() -> Signature {
        Signature {
            from: StateId::new(6).unwrap(),
            to: StateId::new(7).unwrap(),
            reason: AlarmReason::DurationAbnormal,
        }
    }

    #[test]
    fn accepted_on_fresh_signature() {
        let mut l = RewardLedger::default();
        let fx = l.apply(sig(), Disposition::Accepted, 3);
        assert_eq!(fx.reward_delta, 1.0);
        assert_eq!(fx.streak, 0);
        assert!(!fx.adaptation_signal);
        assert_eq!(l.get(&sig()).unwrap().reward, 1.0);
    }

    #[test]
    fn three_rejections_signal() {
        let mut l = RewardLedger::default();
        assert!(!l.apply(sig(), Disposition::Rejected, 3).adaptation_signal);
        assert!(!l.apply(sig(), Disposition::Rejected, 3).adaptation_signal);
        let fx = l.apply(sig(), Disposition::Rejected, 3);
        assert!(fx.adaptation_signal);
        assert_eq!(fx.streak, 3);
        assert_eq!(l.get(&sig()).unwrap().reward, -3.0);
    }

    #[test]
    fn acceptance_resets_streak() {
        let mut l = RewardLedger::default();
        l.apply(sig(), Disposition::Rejected, 3);
        l.apply(sig(), Disposition::Accepted, 3);
        let fx = l.apply(sig(), Disposition::Rejected, 3);
        assert_eq!(fx.streak, 1);
        assert!(!fx.adaptation_signal);
    }

    #[test]
    fn overlooked_changes_nothing() {
        let mut l = RewardLedger::default();
        l.apply(sig(), Disposition::Rejected, 3);
        let fx = l.apply(sig(), Disposition::Overlooked, 3);
        assert_eq!(fx.reward_delta, 0.0);
        assert_eq!(fx.streak, 1);
    }

    #[test]
    fn signature_text_form() {
        let s = sig();
        assert_eq!(s.to_string(), "6>7:duration_abnormal");
        assert_eq!("6>7:duration_abnormal".parse::<Signature>().unwrap(), s);
        assert!("6>13:duration_abnormal".parse::<Signature>().is_err());
        assert!("6-7".parse::<Signature>().is_err());
    }

    #[test]
    fn alarm_json_shape() {
        let a = Alarm {
            alarm_id: "a-0001".into(),
            ts: 10,
            machine: "cnc-01".into(),
            operation: StateId::new(7).unwrap(),
            from: StateId::new(7).unwrap(),
            to: StateId::new(7).unwrap(),
            detail: AlarmDetail::ProtectiveDistance {
                distance: 12.5,
                d_safe: 50.0,
            },
            status: AlarmStatus::Open,
        };
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(
            json,
            r#"{"alarm_id":"a-0001","ts":10,"machine":"cnc-01","op":7,"from":7,"to":7,"reason":"protective_distance","detail":{"distance":12.5,"d_safe":50.0},"status":"open"}"#
        );
        let back: Alarm = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
    }
}
