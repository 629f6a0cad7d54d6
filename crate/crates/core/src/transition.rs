//! Second-order (trigram) state-transition model.
//!
//! Counts are kept as `f64` because the daily forgetting factor produces
//! fractional values. The context table always equals the row sums of the
//! trigram table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{StateId, STATE_COUNT};

pub const DEFAULT_SMOOTHING_ALPHA: f64 = 1.0;
pub const DEFAULT_DECAY_GAMMA: f64 = 0.98;
pub const DEFAULT_TAU: f64 = 0.05;
pub const DEFAULT_MIN_SUPPORT: f64 = 20.0;

/// Entries smaller than this after decay are dropped.
pub const DROP_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(StateId, StateId, StateId)", into = "(StateId, StateId, StateId)")]
pub struct TrigramKey {
    pub prev2: StateId,
    pub prev1: StateId,
    pub next: StateId,
}

impl TrigramKey {
    pub fn new(prev2: StateId, prev1: StateId, next: StateId) -> Self {
        TrigramKey { prev2, prev1, next }
    }

    pub fn context(&self) -> (StateId, StateId) {
        (self.prev2, self.prev1)
    }
}

impl From<(StateId, StateId, StateId)> for TrigramKey {
    fn from((prev2, prev1, next): (StateId, StateId, StateId)) -> Self {
        TrigramKey { prev2, prev1, next }
    }
}

impl From<TrigramKey> for (StateId, StateId, StateId) {
    fn from(k: TrigramKey) -> Self {
        (k.prev2, k.prev1, k.next)
    }
}

/// Outcome of gating one candidate transition against one model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    Plausible,
    Implausible,
    /// Unseen trigram in a context with less than `min_support` history. The
    /// model has no basis for an opinion; `prior_plausible` is what the
    /// smoothed probability alone would say.
    Unsupported { prior_plausible: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assessment {
    pub verdict: Verdict,
    pub probability: f64,
    pub trigram_count: f64,
    pub context_count: f64,
}

impl Assessment {
    /// Verdict when this model is the only one consulted.
    pub fn standalone_plausible(&self) -> bool {
        match self.verdict {
            Verdict::Plausible => true,
            Verdict::Implausible => false,
            Verdict::Unsupported { prior_plausible } => prior_plausible,
        }
    }
}

/// Thresholds applied on top of the smoothed probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlausibilityRule {
    pub tau: f64,
    /// A trigram never observed in a context seen at least this often is
    /// implausible regardless of its smoothed probability.
    pub min_support: f64,
}

impl Default for PlausibilityRule {
    fn default() -> Self {
        PlausibilityRule {
            tau: DEFAULT_TAU,
            min_support: DEFAULT_MIN_SUPPORT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionCounts {
    #[serde(with = "entries")]
    trigram_counts: BTreeMap<TrigramKey, f64>,
    #[serde(with = "entries")]
    context_counts: BTreeMap<(StateId, StateId), f64>,
    state_set_size: usize,
    smoothing_alpha: f64,
    decay_gamma: f64,
}

impl Default for TransitionCounts {
    fn default() -> Self {
        TransitionCounts::new(DEFAULT_SMOOTHING_ALPHA, DEFAULT_DECAY_GAMMA)
            .expect("default parameters are valid")
    }
}

impl TransitionCounts {
    pub fn new(smoothing_alpha: f64, decay_gamma: f64) -> Result<Self> {
        if !(smoothing_alpha >= 0.0 && smoothing_alpha.is_finite()) {
            return Err(Error::Config(format!(
                "smoothing alpha must be >= 0, got {smoothing_alpha}"
            )));
        }
        if !(decay_gamma > 0.0 && decay_gamma <= 1.0) {
            return Err(Error::Config(format!(
                "decay gamma must be in (0, 1], got {decay_gamma}"
            )));
        }
        Ok(TransitionCounts {
            trigram_counts: BTreeMap::new(),
            context_counts: BTreeMap::new(),
            state_set_size: STATE_COUNT,
            smoothing_alpha,
            decay_gamma,
        })
    }

    pub fn smoothing_alpha(&self) -> f64 {
        self.smoothing_alpha
    }

    pub fn decay_gamma(&self) -> f64 {
        self.decay_gamma
    }

    pub fn state_set_size(&self) -> usize {
        self.state_set_size
    }

    pub fn trigram_count(&self, key: TrigramKey) -> f64 {
        self.trigram_counts.get(&key).copied().unwrap_or(0.0)
    }

    pub fn context_count(&self, prev2: StateId, prev1: StateId) -> f64 {
        self.context_counts.get(&(prev2, prev1)).copied().unwrap_or(0.0)
    }

    pub fn trigrams(&self) -> impl Iterator<Item = (TrigramKey, f64)> + '_ {
        self.trigram_counts.iter().map(|(k, v)| (*k, *v))
    }

    pub fn contexts(&self) -> impl Iterator<Item = ((StateId, StateId), f64)> + '_ {
        self.context_counts.iter().map(|(k, v)| (*k, *v))
    }

    pub fn total(&self) -> f64 {
        self.context_counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.trigram_counts.is_empty()
    }

    pub fn record_transition(&mut self, key: TrigramKey, weight: f64) -> Result<()> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::RejectedInput(format!(
                "transition weight must be positive and finite, got {weight}"
            )));
        }
        *self.trigram_counts.entry(key).or_insert(0.0) += weight;
        *self.context_counts.entry(key.context()).or_insert(0.0) += weight;
        Ok(())
    }

    /// Laplace-smoothed `P(candidate | prev2, prev1)`.
    pub fn transition_probability(&self, prev2: StateId, prev1: StateId, candidate: StateId) -> f64 {
        let tri = self.trigram_count(TrigramKey::new(prev2, prev1, candidate));
        let ctx = self.context_count(prev2, prev1);
        let denom = ctx + self.smoothing_alpha * self.state_set_size as f64;
        if denom == 0.0 {
            return 0.0;
        }
        (tri + self.smoothing_alpha) / denom
    }

    pub fn is_transition_plausible(
        &self,
        prev2: StateId,
        prev1: StateId,
        candidate: StateId,
        tau: f64,
    ) -> (bool, f64) {
        let p = self.transition_probability(prev2, prev1, candidate);
        (p >= tau, p)
    }

    pub fn assess(
        &self,
        prev2: StateId,
        prev1: StateId,
        candidate: StateId,
        rule: &PlausibilityRule,
    ) -> Assessment {
        let trigram_count = self.trigram_count(TrigramKey::new(prev2, prev1, candidate));
        let context_count = self.context_count(prev2, prev1);
        let probability = self.transition_probability(prev2, prev1, candidate);
        let seen = trigram_count > 0.0;
        let verdict = if seen {
            if probability >= rule.tau {
                Verdict::Plausible
            } else {
                Verdict::Implausible
            }
        } else if context_count >= rule.min_support {
            Verdict::Implausible
        } else {
            Verdict::Unsupported {
                prior_plausible: probability >= rule.tau,
            }
        };
        Assessment {
            verdict,
            probability,
            trigram_count,
            context_count,
        }
    }

    /// First-order `P(next | prev)` obtained by marginalising out the older state.
    pub fn first_order_probability(&self, prev: StateId, next: StateId) -> f64 {
        let (mut tri, mut ctx) = (0.0, 0.0);
        for p2 in StateId::all() {
            tri += self.trigram_count(TrigramKey::new(p2, prev, next));
            ctx += self.context_count(p2, prev);
        }
        let denom = ctx + self.smoothing_alpha * self.state_set_size as f64;
        if denom == 0.0 {
            return 0.0;
        }
        (tri + self.smoothing_alpha) / denom
    }

    /// Multiplies every count by the forgetting factor and drops entries that
    /// fall below [`DROP_THRESHOLD`].
    pub fn decay_counts(&mut self) {
        if self.decay_gamma == 1.0 {
            return;
        }
        let gamma = self.decay_gamma;
        self.trigram_counts.retain(|_, v| {
            *v *= gamma;
            *v >= DROP_THRESHOLD
        });
        // contexts are rebuilt so dropped trigrams leave no residue
        self.context_counts.clear();
        for (k, v) in &self.trigram_counts {
            *self.context_counts.entry(k.context()).or_insert(0.0) += *v;
        }
    }
}

/// Serialises a map with non-string keys as a list of `[key, value]` pairs.
mod entries {
    use std::collections::BTreeMap;

    use serde::de::DeserializeOwned;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<K, V, S>(map: &BTreeMap<K, V>, s: S) -> Result<S::Ok, S::Error>
    where
        K: Serialize,
        V: Serialize,
        S: Serializer,
    {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, K, V, D>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        K: DeserializeOwned + Ord,
        V: DeserializeOwned,
        D: Deserializer<'de>,
    {
        let pairs: Vec<(K, V)> = Vec::deserialize(d)?;
        Ok(pairs.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(n: u8) -> StateId {
        StateId::new(n).unwrap()
    }

    fn key(a: u8, b: u8, c: u8) -> TrigramKey {
        TrigramKey::new(s(a), s(b), s(c))
    }

    #[test]
    fn first_observation() {
        let mut c = TransitionCounts::default();
        c.record_transition(key(1, 2, 3), 1.0).unwrap();
        assert_eq!(c.trigram_count(key(1, 2, 3)), 1.0);
        assert_eq!(c.context_count(s(1), s(2)), 1.0);
    }

    #[test]
    fn replayed_cycle_counts() {
        let mut seq = vec![];
        for _ in 0..5 {
            seq.extend(1..=10u8);
        }
        seq.push(1);
        // brute force: count occurrences of the window (1,2,3)
        let expected = seq.windows(3).filter(|w| w == &[1, 2, 3]).count() as f64;
        let mut c = TransitionCounts::default();
        for w in seq.windows(3) {
            c.record_transition(key(w[0], w[1], w[2]), 1.0).unwrap();
        }
        assert_eq!(expected, 5.0);
        assert_eq!(c.trigram_count(key(1, 2, 3)), 5.0);
    }

    #[test]
    fn decay_between_records() {
        let mut c = TransitionCounts::new(1.0, 0.98).unwrap();
        c.record_transition(key(2, 3, 4), 1.0).unwrap();
        c.decay_counts();
        c.record_transition(key(2, 3, 4), 1.0).unwrap();
        assert!((c.trigram_count(key(2, 3, 4)) - 1.98).abs() < 1e-12);
        assert!((c.context_count(s(2), s(3)) - 1.98).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_weight() {
        let mut c = TransitionCounts::default();
        assert!(c.record_transition(key(1, 2, 3), 0.0).is_err());
        assert!(c.record_transition(key(1, 2, 3), f64::NAN).is_err());
        assert!(c.is_empty());
    }

    fn nine_of_ten(alpha: f64) -> TransitionCounts {
        let mut c = TransitionCounts::new(alpha, 0.98).unwrap();
        c.record_transition(key(2, 3, 4), 9.0).unwrap();
        c.record_transition(key(2, 3, 5), 1.0).unwrap();
        c
    }

    #[test]
    fn laplace_probability() {
        let c = nine_of_ten(1.0);
        let p = c.transition_probability(s(2), s(3), s(4));
        assert!((p - 10.0 / 22.0).abs() < 1e-12);
        assert!((p - 0.4545).abs() < 1e-4);
    }

    #[test]
    fn unseen_context_is_uniform() {
        let c = TransitionCounts::default();
        for cand in StateId::all() {
            assert!((c.transition_probability(s(5), s(9), cand) - 1.0 / 12.0).abs() < 1e-15);
        }
    }

    #[test]
    fn unsmoothed_ratio() {
        let c = nine_of_ten(0.0);
        assert!((c.transition_probability(s(2), s(3), s(4)) - 0.9).abs() < 1e-12);
        assert_eq!(c.transition_probability(s(7), s(7), s(4)), 0.0);
    }

    #[test]
    fn plausibility_threshold() {
        let c = nine_of_ten(1.0);
        let (ok, p) = c.is_transition_plausible(s(2), s(3), s(4), 0.05);
        assert!(ok);
        assert!((p - 10.0 / 22.0).abs() < 1e-12);

        let mut c = TransitionCounts::default();
        c.record_transition(key(2, 3, 4), 100.0).unwrap();
        let (ok, p) = c.is_transition_plausible(s(2), s(3), s(9), 0.05);
        assert!(!ok);
        assert!((p - 1.0 / 112.0).abs() < 1e-15);

        assert!(c.is_transition_plausible(s(2), s(3), s(9), 0.0).0);
    }

    #[test]
    fn decay_rules() {
        let mut c = TransitionCounts::new(1.0, 1.0).unwrap();
        c.record_transition(key(1, 2, 3), 5.0).unwrap();
        let before = c.clone();
        c.decay_counts();
        assert_eq!(c, before);

        let mut c = TransitionCounts::new(1.0, 0.98).unwrap();
        c.record_transition(key(1, 2, 3), 5.0).unwrap();
        c.decay_counts();
        assert!((c.trigram_count(key(1, 2, 3)) - 4.9).abs() < 1e-12);

        let mut c = TransitionCounts::new(1.0, 0.5).unwrap();
        c.record_transition(key(1, 2, 3), 1e-6).unwrap();
        c.record_transition(key(1, 2, 4), 1.0).unwrap();
        c.decay_counts();
        assert_eq!(c.trigrams().count(), 1);
        assert_eq!(c.trigram_count(key(1, 2, 3)), 0.0);
        assert!((c.context_count(s(1), s(2)) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn assessment_min_support() {
        let rule = PlausibilityRule::default();
        let mut c = TransitionCounts::default();
        c.record_transition(key(2, 3, 4), 50.0).unwrap();
        // never observed with ample history
        let a = c.assess(s(2), s(3), s(9), &rule);
        assert_eq!(a.verdict, Verdict::Implausible);
        assert!((a.probability - 1.0 / 62.0).abs() < 1e-15);

        let mut young = TransitionCounts::default();
        young.record_transition(key(2, 3, 4), 4.0).unwrap();
        let a = young.assess(s(2), s(3), s(9), &rule);
        assert_eq!(a.verdict, Verdict::Unsupported { prior_plausible: true });
        assert!(a.standalone_plausible());
        assert_eq!(young.assess(s(2), s(3), s(4), &rule).verdict, Verdict::Plausible);
    }

    #[test]
    fn first_order_marginal() {
        let mut c = TransitionCounts::new(0.0, 1.0).unwrap();
        c.record_transition(key(1, 2, 3), 3.0).unwrap();
        c.record_transition(key(5, 2, 3), 1.0).unwrap();
        c.record_transition(key(5, 2, 4), 4.0).unwrap();
        assert!((c.first_order_probability(s(2), s(3)) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn invalid_parameters() {
        assert!(TransitionCounts::new(-1.0, 0.5).is_err());
        assert!(TransitionCounts::new(1.0, 0.0).is_err());
        assert!(TransitionCounts::new(1.0, 1.5).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let c = nine_of_ten(1.0);
        let json = serde_json::to_string(&c).unwrap();
        let back: TransitionCounts = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
    }
}
