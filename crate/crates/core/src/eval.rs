//! Confusion matrices and per-operation reports.
//!
//! Cells follow the operator-centred convention: an accepted alarm is a true
//! positive, a rejected alarm a false positive, an alarm the operator let
//! pass (overlooked, or never answered) a true negative, and a fault that
//! raised no alarm a false negative. A label-based matrix built from the
//! ground truth is reported next to it.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alarm::{Alarm, AlarmStatus, Disposition};
use crate::error::{Error, Result};
use crate::sim::truth::{GroundTruth, Label};
use crate::state::StateId;
use crate::wire::LogRecord;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub const fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::Tp => self.tp += 1,
            Outcome::Fp => self.fp += 1,
            Outcome::Fn => self.fn_ += 1,
            Outcome::Tn => self.tn += 1,
        }
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_, self.tn + o.tn)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Outcome {
    Tp,
    Fp,
    Fn,
    Tn,
}

/// Cell for a raised alarm given its final status.
pub fn classify_alarm(status: AlarmStatus) -> Outcome {
    match status {
        AlarmStatus::Accepted => Outcome::Tp,
        AlarmStatus::Rejected => Outcome::Fp,
        AlarmStatus::Overlooked | AlarmStatus::Open => Outcome::Tn,
    }
}

/// A value rounded half-up to two decimals, held exactly as hundredths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Hundredths(pub u64);

impl Hundredths {
    /// `scale * num / den`, rounded half-up in integer arithmetic.
    /// `None` when `den` is zero.
    pub fn ratio(num: u64, den: u64, scale: u64) -> Option<Hundredths> {
        if den == 0 {
            return None;
        }
        let n = u128::from(num) * u128::from(scale) * 100;
        let d = u128::from(den);
        Some(Hundredths(((2 * n + d) / (2 * d)) as u64))
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl fmt::Display for Hundredths {
    /// Trailing zeros dropped: `1`, `92.5`, `90.54`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (whole, frac) = (self.0 / 100, self.0 % 100);
        let s = match frac {
            0 => format!("{whole}"),
            f if f % 10 == 0 => format!("{whole}.{}", f / 10),
            f => format!("{whole}.{f:02}"),
        };
        f.pad(&s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub recall: Option<Hundredths>,
    pub precision: Option<Hundredths>,
    pub accuracy_percent: Option<Hundredths>,
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    Metrics {
        recall: Hundredths::ratio(c.tp, c.tp + c.fn_, 1),
        precision: Hundredths::ratio(c.tp, c.tp + c.fp, 1),
        accuracy_percent: Hundredths::ratio(c.tp + c.tn, c.total(), 100),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationReport {
    pub operation: StateId,
    pub counts: ConfusionCounts,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Ground-truth view: how many injected faults raised any alarm, and how
/// many alarms point at a real fault.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub faults: u64,
    pub detected: u64,
    pub true_alarms: u64,
    pub drift_alarms: u64,
    pub false_alarms: u64,
}

impl LabelCounts {
    pub fn recall(&self) -> Option<Hundredths> {
        Hundredths::ratio(self.detected, self.faults, 1)
    }

    pub fn precision(&self) -> Option<Hundredths> {
        Hundredths::ratio(self.true_alarms, self.true_alarms + self.drift_alarms + self.false_alarms, 1)
    }

    fn add(&mut self, o: &LabelCounts) {
        self.faults += o.faults;
        self.detected += o.detected;
        self.true_alarms += o.true_alarms;
        self.drift_alarms += o.drift_alarms;
        self.false_alarms += o.false_alarms;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub rows: Vec<OperationReport>,
    pub total: ConfusionCounts,
    pub aggregate: Metrics,
    pub labelled: BTreeMap<StateId, LabelCounts>,
    pub labelled_total: LabelCounts,
}

/// Micro-aggregation: counts are summed before the metrics are applied.
pub fn aggregate_report(per_op: &BTreeMap<StateId, ConfusionCounts>) -> RunReport {
    let rows: Vec<OperationReport> = per_op
        .iter()
        .map(|(&operation, counts)| OperationReport {
            operation,
            counts: *counts,
            metrics: metrics(counts),
        })
        .collect();
    let total = per_op.values().fold(ConfusionCounts::default(), |a, &b| a + b);
    RunReport {
        rows,
        total,
        aggregate: metrics(&total),
        labelled: BTreeMap::new(),
        labelled_total: LabelCounts::default(),
    }
}

/// Final state of every alarm in a log, dispositions applied.
pub fn final_alarms(log: &[LogRecord]) -> Result<Vec<Alarm>> {
    let mut alarms: Vec<Alarm> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for r in log {
        match r {
            LogRecord::Alarm(a) => {
                index.insert(a.alarm_id.clone(), alarms.len());
                alarms.push(a.clone());
            }
            LogRecord::Disposition { alarm_id, d, .. } => {
                let i = *index
                    .get(alarm_id)
                    .ok_or_else(|| Error::UnknownAlarm(alarm_id.clone()))?;
                alarms[i].status = AlarmStatus::from(*d);
            }
            LogRecord::Model(_) => {}
        }
    }
    Ok(alarms)
}

/// Joins an alarm log with ground truth. Every alarm lands in exactly one
/// cell of its operation; every fault no alarm detected is a false negative
/// of the fault's operation.
pub fn evaluate(log: &[LogRecord], truth: &GroundTruth) -> Result<RunReport> {
    let alarms = final_alarms(log)?;
    let mut per_op: BTreeMap<StateId, ConfusionCounts> =
        StateId::operations().map(|o| (o, ConfusionCounts::default())).collect();
    let mut labelled: BTreeMap<StateId, LabelCounts> =
        StateId::operations().map(|o| (o, LabelCounts::default())).collect();
    let mut detected = vec![false; truth.faults.len()];

    for a in &alarms {
        per_op.entry(a.operation).or_default().add(classify_alarm(a.status));
        let lc = labelled.entry(a.operation).or_default();
        let mut hit = false;
        for (i, f) in truth.faults.iter().enumerate() {
            if f.matches(a) {
                detected[i] = true;
                hit = true;
            }
        }
        match (hit, truth.label_alarm(a)) {
            (true, _) | (_, Label::TrueFault(_)) => lc.true_alarms += 1,
            (false, Label::DriftInduced) => lc.drift_alarms += 1,
            (false, Label::Clean) => lc.false_alarms += 1,
        }
    }
    for (f, hit) in truth.faults.iter().zip(&detected) {
        let lc = labelled.entry(f.op).or_default();
        lc.faults += 1;
        if *hit {
            lc.detected += 1;
        } else {
            per_op.entry(f.op).or_default().add(Outcome::Fn);
        }
    }
    let mut report = aggregate_report(&per_op);
    for lc in labelled.values() {
        report.labelled_total.add(lc);
    }
    report.labelled = labelled;
    Ok(report)
}

fn cell(m: Option<Hundredths>) -> String {
    m.map_or_else(|| "n/a".to_string(), |h| h.to_string())
}

impl RunReport {
    /// Plain-text table, one row per operation plus the aggregate.
    pub fn render(&self) -> String {
        let header = ["Operation", "TP", "FP", "FN", "TN", "Recall", "Precision", "Accuracy(%)"];
        let mut rows: Vec<[String; 8]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.operation.to_string(),
                    r.counts.tp.to_string(),
                    r.counts.fp.to_string(),
                    r.counts.fn_.to_string(),
                    r.counts.tn.to_string(),
                    cell(r.metrics.recall),
                    cell(r.metrics.precision),
                    cell(r.metrics.accuracy_percent),
                ]
            })
            .collect();
        rows.push([
            "All".into(),
            self.total.tp.to_string(),
            self.total.fp.to_string(),
            self.total.fn_.to_string(),
            self.total.tn.to_string(),
            cell(self.aggregate.recall),
            cell(self.aggregate.precision),
            cell(self.aggregate.accuracy_percent),
        ]);
        let mut out = table(&header, &rows);

        if self.labelled_total != LabelCounts::default() {
            out.push_str("\nAgainst ground truth (fault-level recall, alarm-level precision)\n");
            let header = ["Operation", "Faults", "Detected", "TrueAlarms", "DriftAlarms", "FalseAlarms", "Recall", "Precision"];
            let mut rows: Vec<[String; 8]> = self
                .labelled
                .iter()
                .map(|(op, l)| labelled_row(op.to_string(), l))
                .collect();
            rows.push(labelled_row("All".into(), &self.labelled_total));
            out.push_str(&table(&header, &rows));
        }
        out
    }
}

fn labelled_row(name: String, l: &LabelCounts) -> [String; 8] {
    [
        name,
        l.faults.to_string(),
        l.detected.to_string(),
        l.true_alarms.to_string(),
        l.drift_alarms.to_string(),
        l.false_alarms.to_string(),
        cell(l.recall()),
        cell(l.precision()),
    ]
}

fn table<const N: usize>(header: &[&str; N], rows: &[[String; N]]) -> String {
    let mut width = header.map(str::len);
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells
            .zip(width.iter())
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &mut header.iter().copied());
    for r in rows {
        line(&mut out, &mut r.iter().map(String::as_str));
    }
    out
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            LogRecord::parse(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

impl From<Disposition> for Outcome {
    fn from(d: Disposition) -> Outcome {
        classify_alarm(d.into())
    }
}
