//! Model instances, operator-driven spawning and LRU eviction.
//!
//! A rejection streak on one alarm signature spawns a *collecting* instance
//! that learns from all traffic for `retrain_seconds`. It then joins the vote
//! as an *active* instance, or is discarded if it saw too little. Whole
//! instances are evicted least-recently-matched first once the pool exceeds
//! its capacity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::alarm::Signature;
use crate::error::{Error, Result};
use crate::state::{SensorKind, StateId};
use crate::stats::OperationSensorProfile;
use crate::transition::{TransitionCounts, TrigramKey};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptationConfig {
    pub n_rej: u32,
    pub retrain_seconds: i64,
    pub capacity: usize,
    pub decay_gamma: f64,
    /// Collecting instances that observed fewer events are discarded at their deadline.
    pub min_training_events: u64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        AdaptationConfig {
            n_rej: 3,
            retrain_seconds: 10_800,
            capacity: 8,
            decay_gamma: 0.98,
            min_training_events: 100,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rej == 0 {
            return Err(Error::Config("n_rej must be positive".into()));
        }
        if self.retrain_seconds <= 0 {
            return Err(Error::Config("retrain_seconds must be positive".into()));
        }
        if self.capacity == 0 {
            return Err(Error::Config("capacity must be at least 1".into()));
        }
        if !(self.decay_gamma > 0.0 && self.decay_gamma <= 1.0) {
            return Err(Error::Config("decay_gamma must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Collecting,
    Active,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInstance {
    pub model_id: String,
    pub counts: TransitionCounts,
    pub profile: OperationSensorProfile,
    pub phase: Phase,
    pub created_ts: i64,
    pub last_matched_ts: i64,
    pub training_deadline_ts: Option<i64>,
    /// Signature whose rejection streak spawned this instance.
    pub origin: Option<Signature>,
    /// Frames and transitions absorbed so far.
    pub observations: u64,
    seq: u64,
}

impl ModelInstance {
    pub fn is_active(&self) -> bool {
        self.phase == Phase::Active
    }

    pub fn observe_transition(&mut self, key: TrigramKey) -> Result<()> {
        self.counts.record_transition(key, 1.0)?;
        self.observations += 1;
        Ok(())
    }

    pub fn observe_frame(&mut self, operation: StateId, readings: &BTreeMap<SensorKind, f64>) -> Result<()> {
        if operation.is_operation() {
            for (&sensor, &value) in readings {
                self.profile.update_stats(operation, sensor, value)?;
            }
        }
        self.observations += 1;
        Ok(())
    }

    /// Counts one absorbed event when readings are routed individually.
    pub fn count_event(&mut self) {
        self.observations += 1;
    }

    pub fn observe_reading(&mut self, operation: StateId, sensor: SensorKind, value: f64) -> Result<()> {
        self.profile.update_stats(operation, sensor, value)
    }

    pub fn observe_duration(&mut self, operation: StateId, seconds: f64) -> Result<()> {
        self.profile.record_duration(operation, seconds)
    }

    fn lru_key(&self) -> (i64, i64, u64) {
        (self.last_matched_ts, self.created_ts, self.seq)
    }
}

/// Training-time input routed into a collecting instance.
#[derive(Debug, Clone, Copy)]
pub enum Observation<'a> {
    Frame {
        operation: StateId,
        readings: &'a BTreeMap<SensorKind, f64>,
    },
    Transition(TrigramKey),
    Duration {
        operation: StateId,
        seconds: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Lifecycle {
    Spawned { signature: Signature, deadline: i64 },
    Activated { observations: u64 },
    Discarded { observations: u64 },
    Evicted { last_matched_ts: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvent {
    pub ts: i64,
    pub model_id: String,
    #[serde(flatten)]
    pub change: Lifecycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationManager {
    config: AdaptationConfig,
    smoothing_alpha: f64,
    instances: Vec<ModelInstance>,
    next_seq: u64,
}

impl AdaptationManager {
    pub fn new(config: AdaptationConfig, smoothing_alpha: f64) -> Result<Self> {
        config.validate()?;
        TransitionCounts::new(smoothing_alpha, config.decay_gamma)?;
        Ok(AdaptationManager {
            config,
            smoothing_alpha,
            instances: Vec::new(),
            next_seq: 1,
        })
    }

    pub fn config(&self) -> &AdaptationConfig {
        &self.config
    }

    fn fresh(&mut self, phase: Phase, now_ts: i64, origin: Option<Signature>) -> ModelInstance {
        let seq = self.next_seq;
        self.next_seq += 1;
        ModelInstance {
            model_id: format!("m-{seq:04}"),
            counts: TransitionCounts::new(self.smoothing_alpha, self.config.decay_gamma)
                .expect("validated in AdaptationManager::new"),
            profile: OperationSensorProfile::new(),
            phase,
            created_ts: now_ts,
            last_matched_ts: now_ts,
            training_deadline_ts: match phase {
                Phase::Collecting => Some(now_ts + self.config.retrain_seconds),
                Phase::Active => None,
            },
            origin,
            observations: 0,
            seq,
        }
    }

    /// Adds an empty active instance (the cold-start model).
    pub fn bootstrap(&mut self, now_ts: i64) -> String {
        let inst = self.fresh(Phase::Active, now_ts, None);
        let id = inst.model_id.clone();
        self.instances.push(inst);
        id
    }

    pub fn instances(&self) -> &[ModelInstance] {
        &self.instances
    }

    pub fn instances_mut(&mut self) -> &mut [ModelInstance] {
        &mut self.instances
    }

    pub fn get(&self, model_id: &str) -> Option<&ModelInstance> {
        self.instances.iter().find(|m| m.model_id == model_id)
    }

    fn get_mut(&mut self, model_id: &str) -> Result<&mut ModelInstance> {
        self.instances
            .iter_mut()
            .find(|m| m.model_id == model_id)
            .ok_or_else(|| Error::UnknownModel(model_id.to_string()))
    }

    pub fn active(&self) -> impl Iterator<Item = &ModelInstance> {
        self.instances.iter().filter(|m| m.is_active())
    }

    pub fn active_ids(&self) -> Vec<String> {
        self.active().map(|m| m.model_id.clone()).collect()
    }

    pub fn collecting_for(&self, signature: &Signature) -> Option<&ModelInstance> {
        self.instances
            .iter()
            .find(|m| m.phase == Phase::Collecting && m.origin.as_ref() == Some(signature))
    }

    /// Spawns a collecting instance for `signature` unless one is already open.
    pub fn on_adaptation_signal(&mut self, signature: Signature, now_ts: i64) -> Vec<ModelEvent> {
        if self.collecting_for(&signature).is_some() {
            return Vec::new();
        }
        let inst = self.fresh(Phase::Collecting, now_ts, Some(signature));
        let mut events = vec![ModelEvent {
            ts: now_ts,
            model_id: inst.model_id.clone(),
            change: Lifecycle::Spawned {
                signature,
                deadline: inst.training_deadline_ts.unwrap_or(now_ts),
            },
        }];
        self.instances.push(inst);
        events.extend(self.evict_if_over_capacity(now_ts));
        events
    }

    pub fn feed_training(&mut self, model_id: &str, obs: Observation<'_>) -> Result<()> {
        let inst = self.get_mut(model_id)?;
        if inst.phase != Phase::Collecting {
            return Err(Error::NotCollecting(model_id.to_string()));
        }
        match obs {
            Observation::Frame { operation, readings } => inst.observe_frame(operation, readings),
            Observation::Transition(key) => inst.observe_transition(key),
            Observation::Duration { operation, seconds } => inst.observe_duration(operation, seconds),
        }
    }

    /// Ids of instances still collecting, in creation order.
    pub fn collecting_ids(&self) -> Vec<String> {
        self.instances
            .iter()
            .filter(|m| m.phase == Phase::Collecting)
            .map(|m| m.model_id.clone())
            .collect()
    }

    /// Finalises collecting instances whose deadline is `<= now_ts`, then
    /// enforces capacity.
    pub fn advance(&mut self, now_ts: i64) -> Vec<ModelEvent> {
        let mut events = Vec::new();
        let min_events = self.config.min_training_events;
        let mut i = 0;
        while i < self.instances.len() {
            let inst = &mut self.instances[i];
            let due = inst.phase == Phase::Collecting
                && inst.training_deadline_ts.is_some_and(|d| now_ts >= d);
            if !due {
                i += 1;
                continue;
            }
            let observations = inst.observations;
            if observations < min_events {
                let removed = self.instances.remove(i);
                events.push(ModelEvent {
                    ts: now_ts,
                    model_id: removed.model_id,
                    change: Lifecycle::Discarded { observations },
                });
            } else {
                inst.phase = Phase::Active;
                inst.training_deadline_ts = None;
                events.push(ModelEvent {
                    ts: now_ts,
                    model_id: inst.model_id.clone(),
                    change: Lifecycle::Activated { observations },
                });
                i += 1;
            }
        }
        if !events.is_empty() {
            events.extend(self.evict_if_over_capacity(now_ts));
        }
        events
    }

    pub fn touch(&mut self, model_id: &str, now_ts: i64) -> Result<i64> {
        let inst = self.get_mut(model_id)?;
        inst.last_matched_ts = inst.last_matched_ts.max(now_ts);
        Ok(inst.last_matched_ts)
    }

    /// Evicts least-recently-matched active instances while the pool is over
    /// capacity. Collecting instances and the last active instance are kept.
    pub fn evict_if_over_capacity(&mut self, now_ts: i64) -> Vec<ModelEvent> {
        let mut events = Vec::new();
        while self.instances.len() > self.config.capacity {
            let active = self.instances.iter().filter(|m| m.is_active()).count();
            if active <= 1 {
                break;
            }
            let victim = self
                .instances
                .iter()
                .enumerate()
                .filter(|(_, m)| m.is_active())
                .min_by_key(|(_, m)| m.lru_key())
                .map(|(i, _)| i)
                .expect("at least two active instances");
            let removed = self.instances.remove(victim);
            events.push(ModelEvent {
                ts: now_ts,
                model_id: removed.model_id,
                change: Lifecycle::Evicted {
                    last_matched_ts: removed.last_matched_ts,
                },
            });
        }
        events
    }

    pub fn decay_all(&mut self) {
        for inst in &mut self.instances {
            inst.counts.decay_counts();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alarm::AlarmReason;

    fn sig(from: u8) -> Signature {
        Signature {
            from: StateId::new(from).unwrap(),
            to: StateId::new(from).unwrap(),
            reason: AlarmReason::SensorOutlier,
        }
    }

    fn manager(capacity: usize) -> AdaptationManager {
        AdaptationManager::new(
            AdaptationConfig {
                capacity,
                ..AdaptationConfig::default()
            },
            1.0,
        )
        .unwrap()
    }

    fn feed_events(m: &mut AdaptationManager, id: &str, n: usize) {
        let readings = BTreeMap::from([(SensorKind::FeedRate, 100.0)]);
        for _ in 0..n {
            m.feed_training(
                id,
                Observation::Frame {
                    operation: StateId::new(3).unwrap(),
                    readings: &readings,
                },
            )
            .unwrap();
        }
    }

    #[test]
    fn spawn_sets_deadline() {
        let mut m = manager(8);
        m.bootstrap(0);
        let ev = m.on_adaptation_signal(sig(6), 1000);
        assert_eq!(ev.len(), 1);
        let inst = m.get(&ev[0].model_id).unwrap();
        assert_eq!(inst.phase, Phase::Collecting);
        assert_eq!(inst.training_deadline_ts, Some(1000 + 10_800));
    }

    #[test]
    fn spawn_is_idempotent_per_signature() {
        let mut m = manager(8);
        m.bootstrap(0);
        m.on_adaptation_signal(sig(6), 10);
        assert!(m.on_adaptation_signal(sig(6), 20).is_empty());
        assert_eq!(m.instances().len(), 2);
        assert_eq!(m.on_adaptation_signal(sig(7), 20).len(), 1);
    }

    #[test]
    fn activation_after_window() {
        let mut m = manager(8);
        m.bootstrap(0);
        let id = m.on_adaptation_signal(sig(6), 0)[0].model_id.clone();
        feed_events(&mut m, &id, 150);
        assert!(m.advance(10_799).is_empty());
        assert_eq!(m.get(&id).unwrap().phase, Phase::Collecting);
        let ev = m.advance(10_800);
        assert_eq!(ev[0].change, Lifecycle::Activated { observations: 150 });
        assert!(m.get(&id).unwrap().is_active());
        assert!(matches!(
            m.feed_training(&id, Observation::Duration { operation: StateId::new(3).unwrap(), seconds: 1.0 }),
            Err(Error::NotCollecting(_))
        ));
    }

    #[test]
    fn empty_collection_discarded() {
        let mut m = manager(8);
        m.bootstrap(0);
        let id = m.on_adaptation_signal(sig(6), 0)[0].model_id.clone();
        let ev = m.advance(20_000);
        assert_eq!(ev[0].change, Lifecycle::Discarded { observations: 0 });
        assert!(m.get(&id).is_none());
    }

    #[test]
    fn touch_keeps_max() {
        let mut m = manager(8);
        let id = m.bootstrap(5);
        assert_eq!(m.touch(&id, 50).unwrap(), 50);
        assert_eq!(m.touch(&id, 20).unwrap(), 50);
        assert!(m.touch("m-9999", 1).is_err());
    }

    fn activated(m: &mut AdaptationManager, from: u8, at: i64) -> String {
        let id = m.on_adaptation_signal(sig(from), at)[0].model_id.clone();
        feed_events(m, &id, 100);
        m.advance(at + 10_800);
        id
    }

    #[test]
    fn ninth_instance_evicts_least_recent() {
        let mut m = manager(8);
        let base = m.bootstrap(0);
        let mut ids = vec![base];
        for i in 1..8u8 {
            ids.push(activated(&mut m, i, i as i64 * 100_000));
        }
        assert_eq!(m.instances().len(), 8);
        for (i, id) in ids.iter().enumerate() {
            if i != 3 {
                m.touch(id, 2_000_000).unwrap();
            }
        }
        let ev = m.on_adaptation_signal(sig(9), 2_000_001);
        let evicted: Vec<_> = ev
            .iter()
            .filter(|e| matches!(e.change, Lifecycle::Evicted { .. }))
            .map(|e| e.model_id.clone())
            .collect();
        assert_eq!(evicted, vec![ids[3].clone()]);
        assert_eq!(m.instances().len(), 8);
    }

    #[test]
    fn sole_active_instance_survives() {
        let mut m = manager(1);
        let base = m.bootstrap(0);
        let ev = m.on_adaptation_signal(sig(6), 10);
        assert_eq!(ev.len(), 1);
        assert_eq!(m.instances().len(), 2);
        assert!(m.get(&base).is_some());
    }

    #[test]
    fn tie_breaks_on_created_ts() {
        let mut m = manager(2);
        let base = m.bootstrap(0);
        let newer = activated(&mut m, 1, 100);
        // both matched at the same instant
        m.touch(&base, 50_000).unwrap();
        m.touch(&newer, 50_000).unwrap();
        let ev = m.on_adaptation_signal(sig(2), 60_000);
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[1].model_id, base);
        assert!(m.get(&newer).is_some());
    }
}
