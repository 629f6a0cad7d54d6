use std::collections::BTreeMap;

use proptest::prelude::*;

use cncguard::eval::{metrics, ConfusionCounts, Hundredths};
use cncguard::sim::{generate_run, replay_into, FaultInjection, SimConfig};
use cncguard::snapshot;
use cncguard::stats::RunningStats;
use cncguard::transition::{TransitionCounts, TrigramKey, DROP_THRESHOLD};
use cncguard::{
    parse_message, Disposition, Engine, EngineConfig, MachineAlarm, OperatorFeedback, RequestedBy, SensorKind,
    StateId, TelemetryFrame, TransitionRequest, WireMessage,
};

fn state() -> impl Strategy<Value = StateId> {
    (0u8..12).prop_map(|c| StateId::new(c).unwrap())
}

fn machine() -> impl Strategy<Value = String> {
    "[a-z0-9-]{1,12}"
}

fn message() -> impl Strategy<Value = WireMessage> {
    let readings = prop::collection::btree_map(
        prop::sample::select(SensorKind::ALL.to_vec()),
        prop::num::f64::NORMAL | prop::num::f64::ZERO,
        0..11,
    );
    let disposition = prop::sample::select(vec![Disposition::Accepted, Disposition::Rejected, Disposition::Overlooked]);
    prop_oneof![
        (any::<i64>(), machine(), state(), readings).prop_map(|(ts, machine_id, operation, readings)| {
            WireMessage::Frame(TelemetryFrame {
                ts,
                machine_id,
                operation,
                readings,
            })
        }),
        (any::<i64>(), machine(), state(), state(), any::<bool>()).prop_map(|(ts, machine_id, from_op, to_op, op)| {
            WireMessage::Transition(TransitionRequest {
                ts,
                machine_id,
                from_op,
                to_op,
                requested_by: if op { RequestedBy::Operator } else { RequestedBy::Program },
            })
        }),
        (any::<i64>(), "a-[0-9]{1,6}", disposition, prop::option::of(machine())).prop_map(
            |(ts, alarm_id, disposition, machine_id)| {
                WireMessage::Feedback(OperatorFeedback {
                    ts,
                    alarm_id,
                    disposition,
                    machine_id,
                })
            }
        ),
        (any::<i64>(), machine(), "[A-Z]{2}[0-9]{4}")
            .prop_map(|(ts, machine_id, code)| WireMessage::MachineAlarm(MachineAlarm { ts, machine_id, code })),
    ]
}

fn counts() -> impl Strategy<Value = ConfusionCounts> {
    (0u64..10_000, 0u64..10_000, 0u64..10_000, 0u64..10_000)
        .prop_map(|(tp, fp, fn_, tn)| ConfusionCounts::new(tp, fp, fn_, tn))
}

fn model_from(seq: &[StateId]) -> TransitionCounts {
    let mut m = TransitionCounts::new(1.0, 0.98).unwrap();
    for w in seq.windows(3) {
        m.record_transition(TrigramKey::new(w[0], w[1], w[2]), 1.0).unwrap();
    }
    m
}

proptest! {
    #[test]
    fn wire_messages_round_trip(msg in message()) {
        let line = msg.to_line();
        prop_assert!(!line.contains('\n'));
        prop_assert_eq!(parse_message(line.as_bytes()).unwrap(), msg);
    }

    #[test]
    fn smoothed_distribution_sums_to_one(seq in prop::collection::vec(state(), 0..400), a in state(), b in state()) {
        let m = model_from(&seq);
        let total: f64 = StateId::all().map(|n| m.transition_probability(a, b, n)).sum();
        prop_assert!((total - 1.0).abs() < 1e-12, "sum {}", total);
        prop_assert!(StateId::all().all(|n| m.transition_probability(a, b, n) > 0.0));
    }

    #[test]
    fn counts_match_brute_force(seq in prop::collection::vec(state(), 3..600)) {
        let m = model_from(&seq);
        for a in StateId::all() {
            for b in StateId::all() {
                let ctx = seq.windows(3).filter(|w| w[0] == a && w[1] == b).count();
                prop_assert_eq!(m.context_count(a, b), ctx as f64);
                for n in StateId::all() {
                    let tri = seq.windows(3).filter(|w| w[0] == a && w[1] == b && w[2] == n).count();
                    prop_assert_eq!(m.trigram_count(TrigramKey::new(a, b, n)), tri as f64);
                }
            }
        }
    }

    #[test]
    fn decay_scales_or_drops_every_count(seq in prop::collection::vec(state(), 3..300), days in 1usize..800) {
        let mut m = model_from(&seq);
        let before: BTreeMap<TrigramKey, f64> = m.trigrams().collect();
        for _ in 0..days {
            m.decay_counts();
        }
        let factor = 0.98f64.powi(days as i32);
        for (k, v) in &before {
            let after = m.trigram_count(*k);
            let expect = v * factor;
            if after == 0.0 {
                prop_assert!(expect < DROP_THRESHOLD * 1.0001);
            } else {
                prop_assert!(((after - expect) / expect).abs() < 1e-9);
            }
        }
        for ((a, b), c) in m.contexts() {
            let sum: f64 = StateId::all().map(|n| m.trigram_count(TrigramKey::new(a, b, n))).sum();
            prop_assert!((c - sum).abs() <= 1e-12 * sum.max(1.0));
        }
    }

    #[test]
    fn running_stats_match_batch(values in prop::collection::vec(-1e6f64..1e6, 1..3000)) {
        let mut s = RunningStats::with_capacity(1000);
        for &v in &values {
            s.push(v).unwrap();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert_eq!(s.count(), values.len() as u64);
        prop_assert!((s.mean() - mean).abs() <= 1e-9 * scale);
        prop_assert!((s.std() - std).abs() <= 1e-9 * scale);
        prop_assert_eq!(s.min(), values.iter().copied().fold(f64::INFINITY, f64::min));
        prop_assert_eq!(s.max(), values.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let kept: Vec<f64> = values.iter().rev().take(1000).rev().copied().collect();
        prop_assert_eq!(s.samples().iter().copied().collect::<Vec<_>>(), kept.clone());
        let mut sorted = kept;
        sorted.sort_by(f64::total_cmp);
        prop_assert_eq!(s.median().unwrap(), sorted[(sorted.len() - 1) / 2]);
    }

    #[test]
    fn mode_matches_histogram_oracle(
        values in prop::collection::vec((-500i32..500, 0u8..4), 1..400),
        width in prop::sample::select(vec![0.25f64, 1.0, 2.0, 10.0]),
    ) {
        // quarter-unit values keep bin membership exact
        let values: Vec<f64> = values.iter().map(|&(i, q)| f64::from(i) + f64::from(q) * 0.25).collect();
        let mut s = RunningStats::with_capacity(1000);
        for &v in &values {
            s.push(v).unwrap();
        }
        let mut bins: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
        for &v in &values {
            bins.entry((v / width).floor() as i64).or_default().push(v);
        }
        let top = bins.values().map(Vec::len).max().unwrap();
        let (&b, members) = bins.iter().find(|(_, m)| m.len() == top).unwrap();
        let want = if members.iter().all(|&v| v == members[0]) {
            members[0]
        } else {
            (b as f64 + 0.5) * width
        };
        prop_assert_eq!(s.mode(width), Some(want));
    }

    #[test]
    fn stats_ignore_arrival_order(values in prop::collection::vec(-1e3f64..1e3, 1..500), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = values.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let fill = |vs: &[f64]| {
            let mut s = RunningStats::default();
            for &v in vs {
                s.push(v).unwrap();
            }
            s
        };
        let (a, b) = (fill(&values), fill(&shuffled));
        prop_assert_eq!(a.count(), b.count());
        prop_assert_eq!(a.min(), b.min());
        prop_assert_eq!(a.max(), b.max());
        prop_assert!((a.mean() - b.mean()).abs() <= 1e-9 * a.mean().abs().max(1.0));
        prop_assert_eq!(a.median(), b.median());
    }

    #[test]
    fn probability_grows_with_trigram_count(seq in prop::collection::vec(state(), 3..200), a in state(), b in state(), n in state(), extra in 1usize..30) {
        let mut m = model_from(&seq);
        let mut last = m.transition_probability(a, b, n);
        for _ in 0..extra {
            m.record_transition(TrigramKey::new(a, b, n), 1.0).unwrap();
            let p = m.transition_probability(a, b, n);
            prop_assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn rounding_is_nearest_with_ties_up(num in 0u64..1_000_000, den in 1u64..1_000_000, scale in prop::sample::select(vec![1u64, 100])) {
        let h = Hundredths::ratio(num, den, scale).unwrap().0 as i128;
        // exact value is q = num*scale*100/den; require h - 1/2 <= q < h + 1/2
        let twice_q_den = 2 * i128::from(num) * i128::from(scale) * 100;
        let d = i128::from(den);
        prop_assert!(twice_q_den >= (2 * h - 1) * d);
        prop_assert!(twice_q_den < (2 * h + 1) * d);
    }

    #[test]
    fn metrics_ignore_uniform_scaling(c in counts(), k in 1u64..1000) {
        let scaled = ConfusionCounts::new(c.tp * k, c.fp * k, c.fn_ * k, c.tn * k);
        prop_assert_eq!(metrics(&scaled), metrics(&c));
        prop_assert_eq!(metrics(&(c + c)), metrics(&c));
    }

    #[test]
    fn metric_ranges(c in counts()) {
        let m = metrics(&c);
        prop_assert!(m.recall.is_none_or(|h| h.0 <= 100));
        prop_assert!(m.precision.is_none_or(|h| h.0 <= 100));
        prop_assert!(m.accuracy_percent.is_none_or(|h| h.0 <= 10_000));
        prop_assert_eq!(m.recall.is_none(), c.tp + c.fn_ == 0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn snapshot_resume_equals_uninterrupted(seed in 0u64..1000, split in 0.05f64..0.95) {
        let sim = SimConfig { n_cycles: 8, ..SimConfig::default() };
        let faults = FaultInjection::at_rate(0.2, sim.start_ts + 8_000);
        let trace = generate_run(&sim, &faults, None, seed).unwrap();
        let config = EngineConfig { training_until: Some(sim.start_ts + 8_000), ..EngineConfig::default() };

        let mut whole = Engine::new(config.clone()).unwrap();
        let full_log = replay_into(&mut whole, &trace.messages).unwrap();

        let cut = (trace.messages.len() as f64 * split) as usize;
        let mut first = Engine::new(config).unwrap();
        let mut log = replay_into(&mut first, &trace.messages[..cut]).unwrap();
        let mut resumed = snapshot::from_bytes(&snapshot::to_bytes(&first)).unwrap();
        log.extend(replay_into(&mut resumed, &trace.messages[cut..]).unwrap());

        prop_assert_eq!(log, full_log);
        prop_assert!(snapshot::to_bytes(&resumed) == snapshot::to_bytes(&whole));
    }
}
