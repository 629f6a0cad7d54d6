//! Scenario files: process description, fault schedule, drift and operator
//! behaviour. Every field has a default, so an empty file is a valid scenario.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::buffer::BufferPolicy;
use crate::error::{Error, Result};
use crate::state::{SensorKind, StateId};

/// Mean and standard deviation of a normally distributed quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gauss {
    pub mean: f64,
    pub std: f64,
}

impl Gauss {
    pub const fn new(mean: f64, std: f64) -> Self {
        Gauss { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperationProfile {
    pub op: StateId,
    /// Seconds.
    pub duration: Gauss,
    pub sensors: BTreeMap<SensorKind, Gauss>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub machine_id: String,
    pub start_ts: i64,
    pub n_cycles: u32,
    /// Chance per cycle that the rough cut is repeated once (6 -> 5 -> 6).
    pub redo_probability: f64,
    pub human_interaction_ops: BTreeSet<StateId>,
    pub d_safe: f64,
    /// Noise is drawn from a normal distribution truncated at this many
    /// standard deviations.
    pub noise_clip_sigma: f64,
    pub idle_gap: Gauss,
    pub idle_sensors: BTreeMap<SensorKind, Gauss>,
    pub operations: Vec<OperationProfile>,
    pub buffer: BufferPolicy,
}

const DURATION_MEANS: [f64; 10] = [150.0, 200.0, 250.0, 220.0, 270.0, 250.0, 200.0, 170.0, 220.0, 170.0];
// operations 7 and 10 keep the tray close to the operator
const AXIS1_MEANS: [f64; 10] = [120.0, 140.0, 160.0, 180.0, 200.0, 220.0, 100.0, 240.0, 260.0, 110.0];

fn default_sensors(k: usize) -> BTreeMap<SensorKind, Gauss> {
    let kf = k as f64;
    let mut m = BTreeMap::new();
    m.insert(SensorKind::Axis1RelPos, Gauss::new(AXIS1_MEANS[k - 1], 2.0));
    m.insert(SensorKind::Axis2RelPos, Gauss::new(50.0 + 15.0 * kf, 2.0));
    m.insert(SensorKind::Axis3RelPos, Gauss::new(30.0 + 12.0 * kf, 1.5));
    m.insert(SensorKind::Axis4RelPos, Gauss::new(10.0 + 5.0 * kf, 1.0));
    for (i, s) in [
        SensorKind::Axis1ServoLoad,
        SensorKind::Axis2ServoLoad,
        SensorKind::Axis3ServoLoad,
        SensorKind::Axis4ServoLoad,
    ]
    .into_iter()
    .enumerate()
    {
        m.insert(s, Gauss::new(15.0 + 4.0 * kf + 5.0 * i as f64, 1.5));
    }
    m.insert(SensorKind::FeedRate, Gauss::new(400.0 + 60.0 * kf, 8.0));
    m.insert(SensorKind::SpindleSpeed, Gauss::new(2000.0 + 150.0 * kf, 25.0));
    m.insert(SensorKind::ConvertedSpindleSpeed, Gauss::new(1800.0 + 140.0 * kf, 20.0));
    m
}

fn idle_sensors() -> BTreeMap<SensorKind, Gauss> {
    SensorKind::ALL
        .into_iter()
        .map(|s| {
            let g = match s {
                SensorKind::Axis1RelPos => Gauss::new(300.0, 0.5),
                SensorKind::Axis2RelPos | SensorKind::Axis3RelPos | SensorKind::Axis4RelPos => Gauss::new(0.0, 0.2),
                SensorKind::FeedRate | SensorKind::SpindleSpeed | SensorKind::ConvertedSpindleSpeed => {
                    Gauss::new(0.0, 0.0)
                }
                _ => Gauss::new(2.0, 0.3),
            };
            (s, g)
        })
        .collect()
}

impl Default for SimConfig {
    fn default() -> Self {
        let operations = (1..=10u8)
            .map(|k| {
                let mean = DURATION_MEANS[k as usize - 1];
                OperationProfile {
                    op: StateId::operation(k).expect("valid operation"),
                    duration: Gauss::new(mean, mean * 0.04),
                    sensors: default_sensors(k as usize),
                }
            })
            .collect();
        SimConfig {
            seed: 1,
            machine_id: "cnc-01".into(),
            start_ts: 1_496_275_200,
            n_cycles: 72,
            redo_probability: 0.15,
            human_interaction_ops: [7u8, 10]
                .into_iter()
                .map(|n| StateId::operation(n).expect("valid operation"))
                .collect(),
            d_safe: 50.0,
            noise_clip_sigma: 2.0,
            idle_gap: Gauss::new(300.0, 20.0),
            idle_sensors: idle_sensors(),
            operations,
            buffer: BufferPolicy::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.machine_id.is_empty() {
            return bad("machine_id must not be empty".into());
        }
        if !(0.0..=1.0).contains(&self.redo_probability) {
            return bad("redo_probability must be in [0, 1]".into());
        }
        if !(self.noise_clip_sigma > 0.0) {
            return bad("noise_clip_sigma must be positive".into());
        }
        let ops: BTreeSet<StateId> = self.operations.iter().map(|p| p.op).collect();
        if ops.len() != self.operations.len() || !StateId::operations().all(|o| ops.contains(&o)) {
            return bad("operations must list each of 1..=10 exactly once".into());
        }
        let gauss = self
            .operations
            .iter()
            .flat_map(|p| p.sensors.values())
            .chain(self.idle_sensors.values())
            .chain(std::iter::once(&self.idle_gap));
        for g in gauss {
            if !(g.std >= 0.0) || !g.mean.is_finite() || !g.std.is_finite() {
                return bad(format!("invalid distribution {g:?}"));
            }
        }
        for p in &self.operations {
            if !(p.duration.mean > 0.0 && p.duration.std >= 0.0) {
                return bad(format!("operation {} needs a positive duration", p.op));
            }
        }
        if !(self.idle_gap.mean > 0.0) {
            return bad("idle gap must be positive".into());
        }
        self.buffer.validate()
    }

    pub fn profile(&self, op: StateId) -> &OperationProfile {
        self.operations
            .iter()
            .find(|p| p.op == op)
            .expect("validated config lists every operation")
    }
}

/// Per-cycle fault rates. Faults are only injected into cycles starting at or
/// after `from_ts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultInjection {
    pub from_ts: i64,
    pub illegal_transition: f64,
    pub tray_not_returned: f64,
    /// How far short of its position the tray stops, in millimetres.
    pub tray_offset_mm: f64,
    pub tray_tail_seconds: i64,
    pub abnormal_switch_off: f64,
    pub off_seconds: i64,
    pub overrun: f64,
    pub overrun_multiplier: f64,
    /// A wrongly started operation runs for this fraction of its usual
    /// length before being stopped.
    pub aborted_fraction: f64,
}

impl Default for FaultInjection {
    fn default() -> Self {
        FaultInjection {
            from_ts: i64::MIN,
            illegal_transition: 0.0,
            tray_not_returned: 0.0,
            tray_offset_mm: 60.0,
            tray_tail_seconds: 30,
            abnormal_switch_off: 0.0,
            off_seconds: 600,
            overrun: 0.0,
            overrun_multiplier: 1.5,
            aborted_fraction: 0.25,
        }
    }
}

impl FaultInjection {
    pub fn at_rate(rate: f64, from_ts: i64) -> Self {
        FaultInjection {
            from_ts,
            illegal_transition: rate,
            tray_not_returned: rate,
            abnormal_switch_off: rate,
            overrun: rate,
            ..FaultInjection::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("illegal_transition", self.illegal_transition),
            ("tray_not_returned", self.tray_not_returned),
            ("abnormal_switch_off", self.abnormal_switch_off),
            ("overrun", self.overrun),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} rate must be in [0, 1], got {r}")));
            }
        }
        if self.tray_tail_seconds <= 0 || self.off_seconds <= 0 {
            return Err(Error::Config("fault durations must be positive".into()));
        }
        if !(self.overrun_multiplier > 0.0) || !(self.aborted_fraction > 0.0) {
            return Err(Error::Config("fault multipliers must be positive".into()));
        }
        Ok(())
    }
}

/// A legitimate process change: from `activation_ts` on, the listed
/// operations run longer and load the listed sensors differently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftEvent {
    pub activation_ts: i64,
    pub ops: BTreeSet<StateId>,
    pub duration_factor: f64,
    pub sensors: BTreeSet<SensorKind>,
    /// Shift of the listed sensors' means, in units of their standard deviation.
    pub shift_sigma: f64,
}

impl Default for DriftEvent {
    fn default() -> Self {
        DriftEvent {
            activation_ts: 0,
            ops: [6u8, 7, 10]
                .into_iter()
                .map(|n| StateId::operation(n).expect("valid operation"))
                .collect(),
            duration_factor: 1.3,
            sensors: [
                SensorKind::Axis1ServoLoad,
                SensorKind::Axis2ServoLoad,
                SensorKind::Axis3ServoLoad,
                SensorKind::Axis4ServoLoad,
                SensorKind::FeedRate,
            ]
            .into_iter()
            .collect(),
            shift_sigma: 8.0,
        }
    }
}

impl DriftEvent {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_factor > 0.0) || !self.shift_sigma.is_finite() {
            return Err(Error::Config("drift factors must be finite and positive".into()));
        }
        if self.ops.iter().any(|o| !o.is_operation()) {
            return Err(Error::Config("drift may only affect operations 1..=10".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorAgentConfig {
    pub seed: u64,
    pub p_accept_true: f64,
    pub p_overlook_true: f64,
    pub p_reject_false: f64,
    pub reject_drift_alarms: bool,
    pub response_delay_seconds: i64,
}

impl Default for OperatorAgentConfig {
    fn default() -> Self {
        OperatorAgentConfig {
            seed: 7,
            p_accept_true: 0.95,
            p_overlook_true: 0.05,
            p_reject_false: 1.0,
            reject_drift_alarms: true,
            response_delay_seconds: 30,
        }
    }
}

impl OperatorAgentConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.p_accept_true) || !unit.contains(&self.p_overlook_true) || !unit.contains(&self.p_reject_false) {
            return Err(Error::Config("agent probabilities must be in [0, 1]".into()));
        }
        if self.p_accept_true + self.p_overlook_true > 1.0 + 1e-12 {
            return Err(Error::Config("p_accept_true + p_overlook_true must not exceed 1".into()));
        }
        if self.response_delay_seconds < 0 {
            return Err(Error::Config("response delay must not be negative".into()));
        }
        Ok(())
    }
}

/// Everything `simulate` needs, as read from one TOML file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub sim: SimConfig,
    pub faults: FaultInjection,
    pub drift: Option<DriftEvent>,
    pub agent: OperatorAgentConfig,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Scenario::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario always serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.faults.validate()?;
        if let Some(d) = &self.drift {
            d.validate()?;
        }
        self.agent.validate()
    }
}
