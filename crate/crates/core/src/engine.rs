//! The safety engine: a single ordered event loop that gates operator-instructed
//! transitions, screens telemetry frames, raises alarms and turns operator
//! dispositions into rewards and adaptation signals.
//!
//! Alarms never block a transition. The machine state advances regardless and
//! the operator decides what to do with the warning.
//!
//! Voting across active model instances:
//! - a transition is allowed when any instance with an opinion finds it
//!   plausible (instances without support for the context abstain);
//! - a reading or a duration is abnormal only when every active instance flags it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::adaptation::{AdaptationConfig, AdaptationManager, ModelEvent, ModelInstance, Phase};
use crate::alarm::{Alarm, AlarmDetail, AlarmReason, AlarmStatus, Disposition, FeedbackEffect, RewardLedger};
use crate::error::{Error, Result};
use crate::event::{Event, OperatorFeedback, TelemetryFrame, TransitionRequest};
use crate::state::{SensorKind, StateId};
use crate::stats::{CheckReason, OutlierRule, DEFAULT_BIN_WIDTH};
use crate::transition::{Assessment, PlausibilityRule, TrigramKey, Verdict, DEFAULT_SMOOTHING_ALPHA};
use crate::wire::LogRecord;

pub const DEFAULT_D_SAFE_MM: f64 = 50.0;
pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub machine_id: String,
    pub tau: f64,
    pub min_support: f64,
    pub smoothing_alpha: f64,
    pub k_sigma: f64,
    pub warmup: u64,
    /// Minimum axis-1 distance in millimetres while a human-interaction
    /// operation is running.
    pub d_safe: f64,
    pub human_interaction_ops: BTreeSet<StateId>,
    pub decay_interval_seconds: i64,
    /// Events before this timestamp train the base model and raise only
    /// protective-distance alarms.
    pub training_until: Option<i64>,
    pub bin_widths: BTreeMap<SensorKind, f64>,
    pub adaptation: AdaptationConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let rule = PlausibilityRule::default();
        let outlier = OutlierRule::default();
        EngineConfig {
            machine_id: "cnc-01".into(),
            tau: rule.tau,
            min_support: rule.min_support,
            smoothing_alpha: DEFAULT_SMOOTHING_ALPHA,
            k_sigma: outlier.k,
            warmup: outlier.warmup,
            d_safe: DEFAULT_D_SAFE_MM,
            human_interaction_ops: [7u8, 10]
                .into_iter()
                .map(|n| StateId::operation(n).expect("valid operation"))
                .collect(),
            decay_interval_seconds: SECONDS_PER_DAY,
            training_until: None,
            bin_widths: BTreeMap::new(),
            adaptation: AdaptationConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.machine_id.is_empty() {
            return Err(Error::Config("machine_id must not be empty".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must be in [0, 1], got {}", self.tau)));
        }
        if !(self.k_sigma > 0.0) {
            return Err(Error::Config("k_sigma must be positive".into()));
        }
        if !self.d_safe.is_finite() {
            return Err(Error::Config("d_safe must be finite".into()));
        }
        if self.decay_interval_seconds <= 0 {
            return Err(Error::Config("decay_interval_seconds must be positive".into()));
        }
        self.adaptation.validate()
    }

    pub fn plausibility(&self) -> PlausibilityRule {
        PlausibilityRule {
            tau: self.tau,
            min_support: self.min_support,
        }
    }

    pub fn outlier(&self) -> OutlierRule {
        OutlierRule {
            k: self.k_sigma,
            warmup: self.warmup,
        }
    }

    pub fn bin_width(&self, sensor: SensorKind) -> f64 {
        self.bin_widths.get(&sensor).copied().unwrap_or(DEFAULT_BIN_WIDTH)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GateVerdict {
    Allow,
    Alarm(Vec<AlarmReason>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Status {
    pub current_op: StateId,
    pub last_frame_ts: Option<i64>,
    pub clock: Option<i64>,
    pub open_alarms: Vec<Alarm>,
    pub active_model_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Engine {
    config: EngineConfig,
    clock: Option<i64>,
    next_decay_ts: Option<i64>,
    prev2: StateId,
    current: StateId,
    entered_ts: Option<i64>,
    last_frame: Option<TelemetryFrame>,
    /// Frame alarms already raised during the current operation visit.
    visit_alarmed: BTreeSet<(StateId, AlarmReason, SensorKind)>,
    alarms: Vec<Alarm>,
    ledger: RewardLedger,
    models: AdaptationManager,
}

fn alarm_seq(alarm_id: &str) -> Option<usize> {
    alarm_id.strip_prefix("a-")?.parse::<usize>().ok().filter(|&n| n > 0)
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let mut models = AdaptationManager::new(config.adaptation, config.smoothing_alpha)?;
        models.bootstrap(0);
        Ok(Engine {
            config,
            clock: None,
            next_decay_ts: None,
            prev2: StateId::IDLE,
            current: StateId::IDLE,
            entered_ts: None,
            last_frame: None,
            visit_alarmed: BTreeSet::new(),
            alarms: Vec::new(),
            ledger: RewardLedger::default(),
            models,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn models(&self) -> &AdaptationManager {
        &self.models
    }

    pub fn ledger(&self) -> &RewardLedger {
        &self.ledger
    }

    pub fn alarms(&self) -> &[Alarm] {
        &self.alarms
    }

    pub fn alarm(&self, alarm_id: &str) -> Option<&Alarm> {
        let seq = alarm_seq(alarm_id)?;
        self.alarms.get(seq - 1).filter(|a| a.alarm_id == alarm_id)
    }

    pub fn clock(&self) -> Option<i64> {
        self.clock
    }

    pub fn current_state(&self) -> (StateId, StateId) {
        (self.prev2, self.current)
    }

    pub fn in_training(&self, ts: i64) -> bool {
        self.config.training_until.is_some_and(|t| ts < t)
    }

    pub fn current_status(&self) -> Status {
        Status {
            current_op: self.current,
            last_frame_ts: self.last_frame.as_ref().map(|f| f.ts),
            clock: self.clock,
            open_alarms: self.alarms.iter().filter(|a| a.is_open()).cloned().collect(),
            active_model_ids: self.models.active_ids(),
        }
    }

    /// Validates and applies one event. On error the engine is unchanged.
    pub fn handle_event(&mut self, event: Event) -> Result<Vec<LogRecord>> {
        self.validate(&event)?;
        let mut out: Vec<LogRecord> = self
            .advance_clock(event.ts())
            .into_iter()
            .map(LogRecord::Model)
            .collect();
        match event {
            Event::Frame(frame) => {
                let alarms = self.check_frame(frame);
                out.extend(alarms.into_iter().map(LogRecord::Alarm));
            }
            Event::Transition(req) => {
                let (_, alarms) = self.gate_transition(req);
                out.extend(alarms.into_iter().map(LogRecord::Alarm));
            }
            Event::Feedback(fb) => {
                let (effect, events) = self.apply_feedback(&fb)?;
                out.push(LogRecord::Disposition {
                    ts: fb.ts,
                    alarm_id: fb.alarm_id.clone(),
                    d: fb.disposition,
                    reward_delta: effect.reward_delta,
                });
                out.extend(events.into_iter().map(LogRecord::Model));
            }
            Event::MachineAlarm(_) | Event::Tick(_) => {}
        }
        Ok(out)
    }

    fn validate(&self, event: &Event) -> Result<()> {
        let ts = event.ts();
        if let Some(last) = self.clock {
            if ts < last {
                return Err(Error::OutOfOrder { last, got: ts });
            }
        }
        if let Some(m) = event.machine_id() {
            if m != self.config.machine_id {
                return Err(Error::UnknownMachine(m.to_string()));
            }
        }
        match event {
            Event::Feedback(fb) => {
                let alarm = self
                    .alarm(&fb.alarm_id)
                    .ok_or_else(|| Error::UnknownAlarm(fb.alarm_id.clone()))?;
                if !alarm.is_open() {
                    return Err(Error::AlarmClosed(fb.alarm_id.clone()));
                }
            }
            Event::Frame(f) => {
                if let Some((k, v)) = f.readings.iter().find(|(_, v)| !v.is_finite()) {
                    return Err(Error::RejectedInput(format!("non-finite reading {v} for {k}")));
                }
                if let Some(prev) = &self.last_frame {
                    if f.ts <= prev.ts {
                        return Err(Error::OutOfOrder { last: prev.ts, got: f.ts });
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn advance_clock(&mut self, ts: i64) -> Vec<ModelEvent> {
        if self.clock.is_none() {
            self.next_decay_ts = Some(ts + self.config.decay_interval_seconds);
            for inst in self.models.instances_mut() {
                inst.created_ts = ts;
                inst.last_matched_ts = ts;
            }
        }
        self.clock = Some(ts);
        let events = self.models.advance(ts);
        while let Some(due) = self.next_decay_ts.filter(|&d| d <= ts) {
            self.models.decay_all();
            self.next_decay_ts = Some(due + self.config.decay_interval_seconds);
        }
        events
    }

    fn raise(&mut self, ts: i64, operation: StateId, from: StateId, to: StateId, detail: AlarmDetail) -> Alarm {
        let alarm = Alarm {
            alarm_id: format!("a-{:04}", self.alarms.len() + 1),
            ts,
            machine: self.config.machine_id.clone(),
            operation,
            from,
            to,
            detail,
            status: AlarmStatus::Open,
        };
        self.alarms.push(alarm.clone());
        alarm
    }

    /// Multi-instance plausibility vote. Returns whether the transition is
    /// allowed plus each active instance's assessment.
    pub fn vote_transition(&self, key: TrigramKey) -> (bool, Vec<(String, Assessment)>) {
        let rule = self.config.plausibility();
        let assessments: Vec<(String, Assessment)> = self
            .models
            .active()
            .map(|m| (m.model_id.clone(), m.counts.assess(key.prev2, key.prev1, key.next, &rule)))
            .collect();
        let supported: Vec<&Assessment> = assessments
            .iter()
            .map(|(_, a)| a)
            .filter(|a| !matches!(a.verdict, Verdict::Unsupported { .. }))
            .collect();
        let allowed = if supported.is_empty() {
            assessments.iter().any(|(_, a)| a.standalone_plausible())
        } else {
            supported.iter().any(|a| a.verdict == Verdict::Plausible)
        };
        (allowed, assessments)
    }

    pub fn gate_transition(&mut self, req: TransitionRequest) -> (GateVerdict, Vec<Alarm>) {
        let ts = req.ts;
        let training = self.in_training(ts);
        let mut alarms = Vec::new();

        if req.from_op != self.current {
            let expected = self.current;
            alarms.push(self.raise(
                ts,
                req.from_op,
                req.from_op,
                req.to_op,
                AlarmDetail::StateDesync {
                    expected,
                    got: req.from_op,
                },
            ));
            self.prev2 = self.current;
            self.current = req.from_op;
            self.entered_ts = None;
        }

        let from = self.current;
        let key = TrigramKey::new(self.prev2, from, req.to_op);

        // duration of the operation being left
        let elapsed = self
            .entered_ts
            .map(|t| (ts - t) as f64)
            .filter(|&e| e > 0.0 && from.is_operation());
        if let Some(elapsed) = elapsed {
            if let Some(a) = self.screen_duration(ts, from, req.to_op, elapsed, training) {
                alarms.push(a);
            }
        }

        if training {
            for inst in self.models.instances_mut() {
                let _ = inst.observe_transition(key);
            }
        } else {
            let (allowed, assessments) = self.vote_transition(key);
            if allowed {
                let by_id: BTreeMap<&str, &Assessment> =
                    assessments.iter().map(|(id, a)| (id.as_str(), a)).collect();
                for inst in self.models.instances_mut().iter_mut().filter(|m| m.is_active()) {
                    let a = by_id[inst.model_id.as_str()];
                    if a.verdict != Verdict::Implausible {
                        let _ = inst.observe_transition(key);
                    }
                    if a.standalone_plausible() {
                        inst.last_matched_ts = inst.last_matched_ts.max(ts);
                    }
                }
            } else {
                // report the instances that decided the vote
                let voters: Vec<&Assessment> = match assessments
                    .iter()
                    .map(|(_, a)| a)
                    .filter(|a| !matches!(a.verdict, Verdict::Unsupported { .. }))
                    .collect::<Vec<_>>()
                {
                    v if v.is_empty() => assessments.iter().map(|(_, a)| a).collect(),
                    v => v,
                };
                let best = voters
                    .into_iter()
                    .max_by(|a, b| a.probability.total_cmp(&b.probability))
                    .copied();
                if let Some(best) = best {
                    alarms.push(self.raise(
                        ts,
                        from,
                        from,
                        req.to_op,
                        AlarmDetail::ImplausibleTransition {
                            probability: best.probability,
                            tau: self.config.tau,
                            trigram_count: best.trigram_count,
                            context_count: best.context_count,
                        },
                    ));
                }
            }
            for inst in self
                .models
                .instances_mut()
                .iter_mut()
                .filter(|m| m.phase == Phase::Collecting)
            {
                let _ = inst.observe_transition(key);
            }
        }

        // entry into a human-interaction operation needs a safe distance
        let mut entry_alarmed = false;
        if self.config.human_interaction_ops.contains(&req.to_op) {
            let distance = self
                .last_frame
                .as_ref()
                .and_then(|f| f.readings.get(&SensorKind::Axis1RelPos).copied());
            if let Some(distance) = distance.filter(|&d| d < self.config.d_safe) {
                let d_safe = self.config.d_safe;
                alarms.push(self.raise(
                    ts,
                    req.to_op,
                    from,
                    req.to_op,
                    AlarmDetail::ProtectiveDistance { distance, d_safe },
                ));
                entry_alarmed = true;
            }
        }

        self.prev2 = from;
        self.current = req.to_op;
        self.entered_ts = Some(ts);
        self.visit_alarmed.clear();
        if entry_alarmed {
            // the visit's frames do not repeat the entry alarm
            self.visit_alarmed
                .insert((req.to_op, AlarmReason::ProtectiveDistance, SensorKind::Axis1RelPos));
        }

        let verdict = if alarms.is_empty() {
            GateVerdict::Allow
        } else {
            GateVerdict::Alarm(alarms.iter().map(Alarm::reason).collect())
        };
        (verdict, alarms)
    }

    fn screen_duration(&mut self, ts: i64, op: StateId, to: StateId, elapsed: f64, training: bool) -> Option<Alarm> {
        let rule = self.config.outlier();
        if training {
            for inst in self.models.instances_mut() {
                let _ = inst.observe_duration(op, elapsed);
            }
            return None;
        }
        let checks: Vec<(bool, CheckReason)> = self
            .models
            .active()
            .map(|m| {
                let c = m.profile.check_duration(op, elapsed, &rule);
                (c.flagged, c.reason)
            })
            .collect();
        let abnormal = !checks.is_empty() && checks.iter().all(|(f, _)| *f);
        let mut flags = checks.iter().map(|(f, _)| *f);
        for inst in self.models.instances_mut() {
            let learn = match inst.phase {
                Phase::Active => !flags.next().unwrap_or(true),
                Phase::Collecting => true,
            };
            if learn {
                let _ = inst.observe_duration(op, elapsed);
                if inst.is_active() {
                    inst.last_matched_ts = inst.last_matched_ts.max(ts);
                }
            }
        }
        if !abnormal {
            return None;
        }
        let (lower, upper) = match checks[0].1 {
            CheckReason::Outside { lower, upper } | CheckReason::Within { lower, upper } => (lower, upper),
            CheckReason::InsufficientData { .. } => (f64::NAN, f64::NAN),
        };
        Some(self.raise(ts, op, op, to, AlarmDetail::DurationAbnormal { elapsed, lower, upper }))
    }

    pub fn check_frame(&mut self, frame: TelemetryFrame) -> Vec<Alarm> {
        let ts = frame.ts;
        let op = frame.operation;
        let training = self.in_training(ts);
        let mut alarms = Vec::new();

        if self.config.human_interaction_ops.contains(&op) {
            if let Some(&distance) = frame.readings.get(&SensorKind::Axis1RelPos) {
                if distance < self.config.d_safe
                    && self
                        .visit_alarmed
                        .insert((op, AlarmReason::ProtectiveDistance, SensorKind::Axis1RelPos))
                {
                    let d_safe = self.config.d_safe;
                    alarms.push(self.raise(ts, op, op, op, AlarmDetail::ProtectiveDistance { distance, d_safe }));
                }
            }
        }

        if training {
            for inst in self.models.instances_mut() {
                let _ = inst.observe_frame(op, &frame.readings);
            }
        } else if op.is_operation() {
            let rule = self.config.outlier();
            let n_active = self.models.active().count();
            let mut clean_frame = vec![true; n_active];
            for (&sensor, &value) in &frame.readings {
                let checks: Vec<(bool, CheckReason)> = self
                    .models
                    .active()
                    .map(|m| {
                        let c = m.profile.is_outlier(op, sensor, value, &rule);
                        (c.flagged, c.reason)
                    })
                    .collect();
                let outlier = !checks.is_empty() && checks.iter().all(|(f, _)| *f);
                let active = self.models.instances_mut().iter_mut().filter(|m| m.is_active());
                for (idx, inst) in active.enumerate() {
                    if checks[idx].0 {
                        clean_frame[idx] = false;
                    } else {
                        let _ = inst.observe_reading(op, sensor, value);
                    }
                }
                if outlier && self.visit_alarmed.insert((op, AlarmReason::SensorOutlier, sensor)) {
                    let (lower, upper) = match checks[0].1 {
                        CheckReason::Outside { lower, upper } | CheckReason::Within { lower, upper } => {
                            (lower, upper)
                        }
                        CheckReason::InsufficientData { .. } => (f64::NAN, f64::NAN),
                    };
                    alarms.push(self.raise(
                        ts,
                        op,
                        op,
                        op,
                        AlarmDetail::SensorOutlier {
                            sensor,
                            value,
                            lower,
                            upper,
                        },
                    ));
                }
            }
            let mut idx = 0;
            for inst in self.models.instances_mut().iter_mut() {
                match inst.phase {
                    Phase::Active => {
                        inst.count_event();
                        if clean_frame[idx] {
                            inst.last_matched_ts = inst.last_matched_ts.max(ts);
                        }
                        idx += 1;
                    }
                    Phase::Collecting => {
                        let _ = inst.observe_frame(op, &frame.readings);
                    }
                }
            }
        } else {
            for inst in self.models.instances_mut().iter_mut() {
                if inst.phase == Phase::Collecting {
                    let _ = inst.observe_frame(op, &frame.readings);
                }
            }
        }

        self.last_frame = Some(frame);
        alarms
    }

    /// Applies a disposition to an open alarm and forwards a resulting
    /// adaptation signal to the model pool.
    pub fn apply_feedback(&mut self, fb: &OperatorFeedback) -> Result<(FeedbackEffect, Vec<ModelEvent>)> {
        let seq = alarm_seq(&fb.alarm_id).ok_or_else(|| Error::UnknownAlarm(fb.alarm_id.clone()))?;
        let alarm = self
            .alarms
            .get_mut(seq - 1)
            .filter(|a| a.alarm_id == fb.alarm_id)
            .ok_or_else(|| Error::UnknownAlarm(fb.alarm_id.clone()))?;
        if !alarm.is_open() {
            return Err(Error::AlarmClosed(fb.alarm_id.clone()));
        }
        alarm.status = fb.disposition.into();
        let signature = alarm.signature();
        let effect = self
            .ledger
            .apply(signature, fb.disposition, self.config.adaptation.n_rej);
        // hard rules are never learned away
        let learnable = !matches!(
            signature.reason,
            AlarmReason::ProtectiveDistance | AlarmReason::StateDesync
        );
        let events = if effect.adaptation_signal && learnable && fb.disposition == Disposition::Rejected {
            self.models.on_adaptation_signal(signature, fb.ts)
        } else {
            Vec::new()
        };
        Ok((effect, events))
    }

    pub fn touch(&mut self, model_id: &str, now_ts: i64) -> Result<i64> {
        self.models.touch(model_id, now_ts)
    }

    pub fn instance(&self, model_id: &str) -> Option<&ModelInstance> {
        self.models.get(model_id)
    }
}
