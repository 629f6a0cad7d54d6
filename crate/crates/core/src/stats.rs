//! Streaming per-operation sensor and duration statistics.
//!
//! Mean and variance use Welford's single-pass update; median and mode are
//! computed from a bounded ring of the most recent raw samples.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{SensorKind, StateId};

/// Raw samples retained per accumulator for median/mode.
pub const SAMPLE_CAPACITY: usize = 10_000;
pub const DEFAULT_K_SIGMA: f64 = 3.0;
pub const DEFAULT_WARMUP: u64 = 30;
pub const DEFAULT_BIN_WIDTH: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
    min: f64,
    max: f64,
    capacity: usize,
    samples: VecDeque<f64>,
}

impl Default for RunningStats {
    fn default() -> Self {
        RunningStats::with_capacity(SAMPLE_CAPACITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: u64,
    pub mean: f64,
    pub median: f64,
    pub mode: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl RunningStats {
    pub fn with_capacity(capacity: usize) -> Self {
        RunningStats {
            count: 0,
            mean: 0.0,
            m2: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            capacity: capacity.max(1),
            samples: VecDeque::new(),
        }
    }

    pub fn push(&mut self, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::RejectedInput(format!("non-finite sample {value}")));
        }
        self.count += 1;
        let delta = value - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (value - self.mean);
        if self.m2 < 0.0 {
            self.m2 = 0.0;
        }
        self.min = self.min.min(value);
        self.max = self.max.max(value);
        self.mean = self.mean.clamp(self.min, self.max);
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(value);
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn m2(&self) -> f64 {
        self.m2
    }

    /// Population standard deviation; zero when empty.
    pub fn std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).sqrt()
        }
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn samples(&self) -> &VecDeque<f64> {
        &self.samples
    }

    /// Lower median of the retained samples.
    pub fn median(&self) -> Option<f64> {
        if self.samples.is_empty() {
            return None;
        }
        let mut sorted: Vec<f64> = self.samples.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        Some(sorted[(sorted.len() - 1) / 2])
    }

    /// Center of the most populated `bin_width` bin `[k*w, (k+1)*w)` over the
    /// retained samples, lowest bin on ties. When every sample in that bin has
    /// the same value, that value is returned instead of the center.
    pub fn mode(&self, bin_width: f64) -> Option<f64> {
        if self.samples.is_empty() {
            return None;
        }
        let w = if bin_width > 0.0 && bin_width.is_finite() {
            bin_width
        } else {
            DEFAULT_BIN_WIDTH
        };
        // bin -> (population, lowest, highest)
        let mut bins: BTreeMap<i64, (u64, f64, f64)> = BTreeMap::new();
        for &v in &self.samples {
            let b = (v / w).floor() as i64;
            let e = bins.entry(b).or_insert((0, v, v));
            e.0 += 1;
            e.1 = e.1.min(v);
            e.2 = e.2.max(v);
        }
        let mut best: Option<(i64, (u64, f64, f64))> = None;
        for (b, e) in bins {
            if best.is_none_or(|(_, cur)| e.0 > cur.0) {
                best = Some((b, e));
            }
        }
        let (b, (_, lo, hi)) = best?;
        if lo == hi {
            Some(lo)
        } else {
            Some((b as f64 + 0.5) * w)
        }
    }

    pub fn summary(&self, bin_width: f64) -> Option<Summary> {
        if self.count == 0 {
            return None;
        }
        Some(Summary {
            count: self.count,
            mean: self.mean,
            median: self.median()?,
            mode: self.mode(bin_width)?,
            std: self.std(),
            min: self.min,
            max: self.max,
        })
    }

    /// `mean ± k·std`.
    pub fn band(&self, k: f64) -> (f64, f64) {
        let half = k * self.std();
        (self.mean - half, self.mean + half)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierRule {
    pub k: f64,
    pub warmup: u64,
}

impl Default for OutlierRule {
    fn default() -> Self {
        OutlierRule {
            k: DEFAULT_K_SIGMA,
            warmup: DEFAULT_WARMUP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheckReason {
    InsufficientData { count: u64, warmup: u64 },
    Within { lower: f64, upper: f64 },
    Outside { lower: f64, upper: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Check {
    pub flagged: bool,
    pub reason: CheckReason,
}

impl Check {
    fn evaluate(stats: Option<&RunningStats>, value: f64, rule: &OutlierRule) -> Check {
        let count = stats.map_or(0, RunningStats::count);
        let stats = match stats {
            Some(s) if count >= rule.warmup && count > 0 => s,
            _ => {
                return Check {
                    flagged: false,
                    reason: CheckReason::InsufficientData {
                        count,
                        warmup: rule.warmup,
                    },
                }
            }
        };
        let (lower, upper) = stats.band(rule.k);
        let flagged = (value - stats.mean()).abs() > rule.k * stats.std();
        Check {
            flagged,
            reason: if flagged {
                CheckReason::Outside { lower, upper }
            } else {
                CheckReason::Within { lower, upper }
            },
        }
    }
}

/// Per-(operation, sensor) reading statistics plus per-operation durations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OperationSensorProfile {
    stats: BTreeMap<StateId, BTreeMap<SensorKind, RunningStats>>,
    durations: BTreeMap<StateId, RunningStats>,
}

impl OperationSensorProfile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update_stats(&mut self, operation: StateId, sensor: SensorKind, value: f64) -> Result<()> {
        require_operation(operation)?;
        if !value.is_finite() {
            return Err(Error::RejectedInput(format!(
                "non-finite reading {value} for {sensor}"
            )));
        }
        self.stats
            .entry(operation)
            .or_default()
            .entry(sensor)
            .or_default()
            .push(value)
    }

    pub fn record_duration(&mut self, operation: StateId, seconds: f64) -> Result<()> {
        require_operation(operation)?;
        if !(seconds > 0.0 && seconds.is_finite()) {
            return Err(Error::RejectedInput(format!(
                "duration must be positive, got {seconds}"
            )));
        }
        self.durations.entry(operation).or_default().push(seconds)
    }

    pub fn stats(&self, operation: StateId, sensor: SensorKind) -> Option<&RunningStats> {
        self.stats.get(&operation)?.get(&sensor)
    }

    pub fn duration_stats(&self, operation: StateId) -> Option<&RunningStats> {
        self.durations.get(&operation)
    }

    pub fn summarize(&self, operation: StateId, sensor: SensorKind, bin_width: f64) -> Result<Summary> {
        self.stats(operation, sensor)
            .and_then(|s| s.summary(bin_width))
            .ok_or_else(|| Error::NoData {
                operation,
                key: sensor.to_string(),
            })
    }

    pub fn summarize_duration(&self, operation: StateId, bin_width: f64) -> Result<Summary> {
        self.duration_stats(operation)
            .and_then(|s| s.summary(bin_width))
            .ok_or_else(|| Error::NoData {
                operation,
                key: "duration".into(),
            })
    }

    pub fn is_outlier(&self, operation: StateId, sensor: SensorKind, value: f64, rule: &OutlierRule) -> Check {
        Check::evaluate(self.stats(operation, sensor), value, rule)
    }

    pub fn check_duration(&self, operation: StateId, elapsed_seconds: f64, rule: &OutlierRule) -> Check {
        Check::evaluate(self.duration_stats(operation), elapsed_seconds, rule)
    }

    pub fn sample_count(&self) -> u64 {
        self.stats
            .values()
            .flat_map(|m| m.values())
            .map(RunningStats::count)
            .sum()
    }
}

fn require_operation(op: StateId) -> Result<()> {
    if op.is_operation() {
        Ok(())
    } else {
        Err(Error::RejectedInput(format!(
            "statistics are kept for operations 1-10 only, got {op}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(n: u8) -> StateId {
        StateId::operation(n).unwrap()
    }

    fn stats_of(values: &[f64]) -> RunningStats {
        let mut s = RunningStats::default();
        for &v in values {
            s.push(v).unwrap();
        }
        s
    }

    #[test]
    fn singleton() {
        let s = stats_of(&[7.0]);
        let sum = s.summary(1.0).unwrap();
        assert_eq!((sum.count, sum.mean, sum.std, sum.min, sum.max), (1, 7.0, 0.0, 7.0, 7.0));
    }

    #[test]
    fn small_sample_summary() {
        // mean 10/4, deviations -1.5,-0.5,-0.5,2.5 -> m2 = 9, var 2.25
        let sum = stats_of(&[1.0, 2.0, 2.0, 5.0]).summary(1.0).unwrap();
        assert_eq!(sum.count, 4);
        assert!((sum.mean - 2.5).abs() < 1e-15);
        assert_eq!(sum.median, 2.0);
        assert_eq!(sum.mode, 2.0);
        assert!((sum.std - 1.5).abs() < 1e-15);
        assert_eq!((sum.min, sum.max), (1.0, 5.0));
    }

    #[test]
    fn identical_values() {
        let sum = stats_of(&[3.3; 50]).summary(1.0).unwrap();
        assert_eq!(sum.mode, 3.3);
        assert_eq!(sum.median, 3.3);
        assert_eq!(sum.mean, 3.3);
        assert_eq!(sum.std, 0.0);
    }

    #[test]
    fn histogram_mode_center() {
        let s = stats_of(&[1.0, 1.4, 2.6]);
        assert_eq!(s.mode(1.0), Some(1.5));
        // tie between [1,2) and [3,4) goes to the lower bin
        let s = stats_of(&[3.2, 1.1, 3.7, 1.9]);
        assert_eq!(s.mode(1.0), Some(1.5));
        let s = stats_of(&[12.0, 14.0, 31.0]);
        assert_eq!(s.mode(5.0), Some(12.5));
    }

    #[test]
    fn ring_capacity() {
        let mut s = RunningStats::default();
        for i in 0..=SAMPLE_CAPACITY {
            s.push(i as f64).unwrap();
        }
        assert_eq!(s.count(), SAMPLE_CAPACITY as u64 + 1);
        assert_eq!(s.samples().len(), SAMPLE_CAPACITY);
        assert_eq!(s.samples().front().copied(), Some(1.0));
        assert_eq!(s.min(), 0.0);
    }

    #[test]
    fn non_finite_rejected() {
        let mut p = OperationSensorProfile::new();
        assert!(p.update_stats(op(1), SensorKind::FeedRate, f64::NAN).is_err());
        assert!(p.update_stats(op(1), SensorKind::FeedRate, f64::INFINITY).is_err());
        assert!(p.update_stats(StateId::IDLE, SensorKind::FeedRate, 1.0).is_err());
        assert!(p.stats(op(1), SensorKind::FeedRate).is_none());
    }

    #[test]
    fn summarize_empty_is_no_data() {
        let p = OperationSensorProfile::new();
        assert!(matches!(
            p.summarize(op(3), SensorKind::SpindleSpeed, 1.0),
            Err(Error::NoData { .. })
        ));
    }

    fn warm_profile(values: &[f64]) -> OperationSensorProfile {
        let mut p = OperationSensorProfile::new();
        for &v in values {
            p.update_stats(op(2), SensorKind::Axis1ServoLoad, v).unwrap();
        }
        p
    }

    #[test]
    fn outlier_rule() {
        let values: Vec<f64> = [1.0, 2.0, 2.0, 5.0].repeat(10);
        let p = warm_profile(&values);
        let rule = OutlierRule::default();
        assert!(!p.is_outlier(op(2), SensorKind::Axis1ServoLoad, 2.5, &rule).flagged);
        let c = p.is_outlier(op(2), SensorKind::Axis1ServoLoad, 8.0, &rule);
        assert!(c.flagged);
        match c.reason {
            CheckReason::Outside { lower, upper } => {
                assert!((upper - 7.0).abs() < 1e-12);
                assert!((lower + 2.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(!p.is_outlier(op(2), SensorKind::Axis1ServoLoad, 7.0, &rule).flagged);
    }

    #[test]
    fn outlier_warmup() {
        let p = warm_profile(&[1.0, 2.0, 2.0, 5.0]);
        let c = p.is_outlier(op(2), SensorKind::Axis1ServoLoad, 1e6, &OutlierRule::default());
        assert!(!c.flagged);
        assert_eq!(c.reason, CheckReason::InsufficientData { count: 4, warmup: 30 });
        // a lowered warmup applies the band
        let rule = OutlierRule { k: 3.0, warmup: 4 };
        assert!(p.is_outlier(op(2), SensorKind::Axis1ServoLoad, 8.0, &rule).flagged);
    }

    #[test]
    fn duration_check() {
        let mut p = OperationSensorProfile::new();
        // 290 and 310 alternating: mean 300, population std 10
        for i in 0..40 {
            p.record_duration(op(4), if i % 2 == 0 { 290.0 } else { 310.0 }).unwrap();
        }
        let rule = OutlierRule::default();
        assert!(!p.check_duration(op(4), 300.0, &rule).flagged);
        assert!(p.check_duration(op(4), 400.0, &rule).flagged);
        assert!(p.check_duration(op(4), 260.0, &rule).flagged);
        let fresh = OperationSensorProfile::new();
        let c = fresh.check_duration(op(4), 9999.0, &rule);
        assert!(!c.flagged);
        assert!(matches!(c.reason, CheckReason::InsufficientData { .. }));
        assert!(p.record_duration(op(4), 0.0).is_err());
    }
}
