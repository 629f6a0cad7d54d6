//! Per-second telemetry for a run of machining cycles.
//!
//! A cycle is `IDLE -> 1 -> 2 -> ... -> 10 -> IDLE` followed by an idle gap.
//! Operation 6 may hand back to 5 once so the rough cut is repeated. Each
//! transition is emitted at the timestamp of the first frame of the operation
//! it enters, so a visit of `d` seconds produces exactly `d` frames.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::buffer::EdgeBuffer;
use crate::error::Result;
use crate::event::{RequestedBy, TelemetryFrame, TransitionRequest};
use crate::sim::config::{DriftEvent, FaultInjection, Gauss, SimConfig};
use crate::sim::truth::{DriftWindow, FaultKind, FaultRecord, GroundTruth};
use crate::state::{SensorKind, StateId};
use crate::wire::WireMessage;

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub messages: Vec<WireMessage>,
    pub truth: GroundTruth,
}

fn op(n: u8) -> StateId {
    StateId::operation(n).expect("valid operation")
}

/// Operations that may legally follow `from` in the middle of a cycle.
fn legal_successors(from: u8) -> Vec<u8> {
    match from {
        5 => vec![6],
        6 => vec![5, 7],
        n => vec![n + 1],
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct CyclePlan {
    /// Jump from the first operation to the second instead of continuing.
    illegal: Option<(u8, u8)>,
    tray: bool,
    switch_off: bool,
    overrun: Option<u8>,
    redo: bool,
}

struct Generator<'a> {
    config: &'a SimConfig,
    faults: &'a FaultInjection,
    drift: Option<&'a DriftEvent>,
    rng: ChaCha8Rng,
    buffer: EdgeBuffer,
    ts: i64,
    current: StateId,
    out: Vec<WireMessage>,
    records: Vec<FaultRecord>,
}

impl Generator<'_> {
    fn noise(&mut self, g: Gauss) -> f64 {
        if g.std == 0.0 {
            return g.mean;
        }
        let clip = self.config.noise_clip_sigma;
        loop {
            let z: f64 = self.rng.sample(StandardNormal);
            if z.abs() <= clip {
                return g.mean + g.std * z;
            }
        }
    }

    fn emit(&mut self, msg: WireMessage) {
        let ts = msg.ts();
        let released = self.buffer.buffer_and_forward(msg, ts);
        self.out.extend(released);
    }

    fn transition(&mut self, to: StateId) {
        let msg = WireMessage::Transition(TransitionRequest {
            ts: self.ts,
            machine_id: self.config.machine_id.clone(),
            from_op: self.current,
            to_op: to,
            requested_by: RequestedBy::Operator,
        });
        self.emit(msg);
        self.current = to;
    }

    fn drifted(&self, op: StateId) -> Option<&DriftEvent> {
        self.drift
            .filter(|d| self.ts >= d.activation_ts && d.ops.contains(&op))
    }

    fn duration(&mut self, op: StateId) -> i64 {
        let mut g = self.config.profile(op).duration;
        if let Some(d) = self.drifted(op) {
            g.mean *= d.duration_factor;
            g.std *= d.duration_factor;
        }
        (self.noise(g).round() as i64).max(1)
    }

    fn sensors(&self, op: StateId) -> BTreeMap<SensorKind, Gauss> {
        let mut sensors = if op.is_operation() {
            self.config.profile(op).sensors.clone()
        } else {
            self.config.idle_sensors.clone()
        };
        if let Some(d) = self.drifted(op) {
            for s in &d.sensors {
                if let Some(g) = sensors.get_mut(s) {
                    g.mean += d.shift_sigma * g.std;
                }
            }
        }
        sensors
    }

    /// Emits `seconds` frames of the current state. The last `tray_tail`
    /// frames carry an axis-1 position short by `tray_offset`.
    fn frames(&mut self, seconds: i64, tray_tail: i64, tray_offset: f64) {
        let op = self.current;
        let sensors = self.sensors(op);
        for i in 0..seconds {
            let mut readings = BTreeMap::new();
            for (&s, &g) in &sensors {
                let mut v = self.noise(g);
                if s == SensorKind::Axis1RelPos && i >= seconds - tray_tail {
                    v -= tray_offset;
                }
                readings.insert(s, v);
            }
            let frame = TelemetryFrame {
                ts: self.ts,
                machine_id: self.config.machine_id.clone(),
                operation: op,
                readings,
            };
            self.emit(WireMessage::Frame(frame));
            self.ts += 1;
        }
    }

    fn idle(&mut self) {
        let gap = (self.noise(self.config.idle_gap).round() as i64).max(1);
        self.frames(gap, 0, 0.0);
    }

    fn plan(&mut self) -> CyclePlan {
        let f = self.faults;
        let inject = self.ts >= f.from_ts;
        let mut p = CyclePlan {
            redo: self.rng.random_bool(self.config.redo_probability),
            ..CyclePlan::default()
        };
        // draw every variate each cycle so the clean stream does not depend
        // on the fault schedule
        let u: [f64; 4] = [self.rng.random(), self.rng.random(), self.rng.random(), self.rng.random()];
        let from = self.rng.random_range(1..=9u8);
        let candidates: Vec<u8> = (1..=10u8)
            .filter(|&t| t != from && !legal_successors(from).contains(&t))
            .collect();
        let to = candidates[self.rng.random_range(0..candidates.len())];
        let overrun_op = self.rng.random_range(1..=10u8);
        if inject {
            if u[0] < f.illegal_transition {
                p.illegal = Some((from, to));
            }
            p.tray = u[1] < f.tray_not_returned;
            p.switch_off = u[2] < f.abnormal_switch_off;
            if u[3] < f.overrun {
                p.overrun = Some(overrun_op);
            }
        }
        p
    }

    fn visit(&mut self, plan: &CyclePlan) {
        let op = self.current;
        let enter = self.ts;
        let mut d = self.duration(op);
        let overrun = plan.overrun == Some(op.code());
        if overrun {
            d = (d as f64 * self.faults.overrun_multiplier).round() as i64;
        }
        let tray = plan.tray && op.code() == 7;
        let tail = if tray { self.faults.tray_tail_seconds.min(d) } else { 0 };
        self.frames(d, tail, if tray { self.faults.tray_offset_mm } else { 0.0 });
        if overrun {
            self.record(FaultKind::Overrun, op, enter, self.ts, op, op);
        }
        if tray {
            self.record(FaultKind::TrayNotReturned, op, self.ts - tail, self.ts, op, op);
        }
    }

    fn record(&mut self, kind: FaultKind, op: StateId, start: i64, end: i64, from: StateId, to: StateId) {
        self.records.push(FaultRecord {
            kind,
            op,
            start,
            end,
            from,
            to,
        });
    }

    fn cycle(&mut self) {
        let mut plan = self.plan();
        self.transition(op(1));
        for k in 1..=10u8 {
            self.visit(&plan);
            // faults fire once per cycle
            plan.overrun = plan.overrun.filter(|&o| o != k);
            if k == 6 && plan.redo {
                plan.redo = false;
                self.transition(op(5));
                self.visit(&plan);
                self.transition(op(6));
                self.visit(&plan);
            }
            if k == 10 {
                break;
            }
            match plan.illegal {
                Some((from, to)) if from == k => {
                    let jump = self.ts;
                    self.transition(op(to));
                    let full = self.duration(op(to));
                    let d = ((full as f64 * self.faults.aborted_fraction).round() as i64).max(1);
                    self.frames(d, 0, 0.0);
                    self.transition(op(k + 1));
                    self.record(FaultKind::IllegalTransition, op(k), jump, self.ts, op(k), op(to));
                }
                _ => self.transition(op(k + 1)),
            }
        }
        if plan.switch_off {
            let at = self.ts;
            self.transition(StateId::OFF);
            self.record(FaultKind::AbnormalSwitchOff, op(10), at, at, op(10), StateId::OFF);
            self.ts += self.faults.off_seconds;
        }
        self.transition(StateId::IDLE);
        self.idle();
    }
}

/// Generates a complete run. Identical inputs give identical output.
pub fn generate_run(
    config: &SimConfig,
    faults: &FaultInjection,
    drift: Option<&DriftEvent>,
    seed: u64,
) -> Result<SimTrace> {
    config.validate()?;
    faults.validate()?;
    if let Some(d) = drift {
        d.validate()?;
    }
    let mut g = Generator {
        config,
        faults,
        drift,
        rng: ChaCha8Rng::seed_from_u64(seed),
        buffer: EdgeBuffer::new(config.buffer.clone())?,
        ts: config.start_ts,
        current: StateId::IDLE,
        out: Vec::new(),
        records: Vec::new(),
    };
    g.idle();
    for _ in 0..config.n_cycles {
        g.cycle();
    }
    let tail = g.buffer.flush(g.ts);
    g.out.extend(tail);
    let truth = GroundTruth {
        machine: config.machine_id.clone(),
        faults: g.records,
        drift: drift.map(|d| DriftWindow {
            start: d.activation_ts,
            ops: d.ops.clone(),
        }),
    };
    Ok(SimTrace { messages: g.out, truth })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n_cycles: u32) -> SimConfig {
        SimConfig {
            n_cycles,
            ..SimConfig::default()
        }
    }

    fn transitions(trace: &SimTrace) -> Vec<(u8, u8)> {
        trace
            .messages
            .iter()
            .filter_map(|m| match m {
                WireMessage::Transition(t) => Some((t.from_op.code(), t.to_op.code())),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn clean_run_has_no_faults() {
        let t = generate_run(&small(5), &FaultInjection::default(), None, 3).unwrap();
        assert!(t.truth.faults.is_empty());
        let tr = transitions(&t);
        assert_eq!(tr[0], (0, 1));
        assert!(tr.iter().all(|&(a, b)| b == a + 1 || (a, b) == (10, 0) || (a, b) == (6, 5) || (a, b) == (0, 1)));
    }

    #[test]
    fn same_seed_same_stream() {
        let f = FaultInjection::at_rate(0.3, 0);
        let a = generate_run(&small(4), &f, None, 9).unwrap();
        let b = generate_run(&small(4), &f, None, 9).unwrap();
        assert_eq!(a, b);
        let c = generate_run(&small(4), &f, None, 10).unwrap();
        assert_ne!(a.messages, c.messages);
    }

    #[test]
    fn frames_strictly_increasing_and_transitions_in_order() {
        let t = generate_run(&small(6), &FaultInjection::at_rate(0.5, 0), None, 1).unwrap();
        let mut last_frame = i64::MIN;
        let mut last = i64::MIN;
        for m in &t.messages {
            assert!(m.ts() >= last);
            last = m.ts();
            if let WireMessage::Frame(f) = m {
                assert!(f.ts > last_frame);
                last_frame = f.ts;
            }
        }
    }

    #[test]
    fn tray_rate_one_marks_every_op7_exit() {
        let f = FaultInjection {
            tray_not_returned: 1.0,
            ..FaultInjection::default()
        };
        let t = generate_run(&small(5), &f, None, 2).unwrap();
        assert_eq!(t.truth.faults.len(), 5);
        for r in &t.truth.faults {
            assert_eq!(r.kind, FaultKind::TrayNotReturned);
            assert_eq!(r.end - r.start, f.tray_tail_seconds);
            let tail: Vec<f64> = t
                .messages
                .iter()
                .filter_map(|m| match m {
                    WireMessage::Frame(fr) if fr.ts >= r.start && fr.ts < r.end => {
                        fr.readings.get(&SensorKind::Axis1RelPos).copied()
                    }
                    _ => None,
                })
                .collect();
            assert_eq!(tail.len() as i64, f.tray_tail_seconds);
            assert!(tail.iter().all(|&d| d < 50.0));
        }
    }

    #[test]
    fn illegal_jumps_leave_legal_paths() {
        let f = FaultInjection {
            illegal_transition: 1.0,
            ..FaultInjection::default()
        };
        let t = generate_run(&small(8), &f, None, 4).unwrap();
        assert_eq!(t.truth.faults.len(), 8);
        let tr = transitions(&t);
        for r in &t.truth.faults {
            let (a, b) = (r.from.code(), r.to.code());
            assert!(!legal_successors(a).contains(&b) && a != b);
            assert!(tr.contains(&(a, b)));
        }
    }

    #[test]
    fn switch_off_leaves_a_silent_gap() {
        let f = FaultInjection {
            abnormal_switch_off: 1.0,
            ..FaultInjection::default()
        };
        let t = generate_run(&small(2), &f, None, 4).unwrap();
        assert_eq!(t.truth.faults.len(), 2);
        let tr = transitions(&t);
        assert_eq!(tr.iter().filter(|&&p| p == (10, 11)).count(), 2);
        assert_eq!(tr.iter().filter(|&&p| p == (11, 0)).count(), 2);
        let off = t.truth.faults[0].start;
        assert!(!t
            .messages
            .iter()
            .any(|m| matches!(m, WireMessage::Frame(fr) if fr.ts >= off && fr.ts < off + f.off_seconds)));
    }

    #[test]
    fn spindle_speed_arrives_once_a_minute() {
        let t = generate_run(&small(1), &FaultInjection::default(), None, 5).unwrap();
        let ts: Vec<i64> = t
            .messages
            .iter()
            .filter_map(|m| match m {
                WireMessage::Frame(f) if f.readings.contains_key(&SensorKind::ConvertedSpindleSpeed) => Some(f.ts),
                _ => None,
            })
            .collect();
        assert!(ts.len() > 10);
        // the end-of-run flush may come early
        let boundaries = &ts[..ts.len() - 1];
        assert!(boundaries.iter().all(|t| t % 60 == 0));
        assert!(boundaries.windows(2).all(|w| w[1] - w[0] >= 60));
    }
}
