//! Closed-loop runs: the engine consumes a simulated stream while the
//! operator agent answers each alarm after its response delay.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::Engine;
use crate::error::Result;
use crate::event::{Event, OperatorFeedback};
use crate::sim::agent::operator_agent_respond;
use crate::sim::config::OperatorAgentConfig;
use crate::sim::truth::GroundTruth;
use crate::wire::{LogRecord, WireMessage};

#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    /// Every message the engine consumed, feedback included, in order.
    /// Replaying it into a fresh engine reproduces `log`.
    pub journal: Vec<WireMessage>,
    pub log: Vec<LogRecord>,
    pub engine: Engine,
}

pub fn run_closed_loop(
    mut engine: Engine,
    messages: &[WireMessage],
    truth: &GroundTruth,
    agent: &OperatorAgentConfig,
) -> Result<ClosedLoopRun> {
    agent.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(agent.seed);
    // feedback due at a timestamp goes ahead of stream messages with the same
    // timestamp: it was queued first
    let mut pending: BTreeMap<(i64, u64), OperatorFeedback> = BTreeMap::new();
    let mut seq = 0u64;
    let mut journal = Vec::with_capacity(messages.len());
    let mut log = Vec::new();

    let mut deliver = |engine: &mut Engine,
                       msg: WireMessage,
                       pending: &mut BTreeMap<(i64, u64), OperatorFeedback>,
                       journal: &mut Vec<WireMessage>,
                       log: &mut Vec<LogRecord>|
     -> Result<()> {
        let records = engine.handle_event(Event::from(msg.clone()))?;
        journal.push(msg);
        for r in &records {
            if let LogRecord::Alarm(alarm) = r {
                let fb = operator_agent_respond(alarm, truth.label_alarm(alarm), agent, &mut rng);
                pending.insert((fb.ts, seq), fb);
                seq += 1;
            }
        }
        log.extend(records);
        Ok(())
    };

    for msg in messages {
        while let Some(entry) = pending.first_entry() {
            if entry.key().0 > msg.ts() {
                break;
            }
            let fb = entry.remove();
            deliver(&mut engine, WireMessage::Feedback(fb), &mut pending, &mut journal, &mut log)?;
        }
        deliver(&mut engine, msg.clone(), &mut pending, &mut journal, &mut log)?;
    }
    while let Some((_, fb)) = pending.pop_first() {
        deliver(&mut engine, WireMessage::Feedback(fb), &mut pending, &mut journal, &mut log)?;
    }
    Ok(ClosedLoopRun { journal, log, engine })
}

/// Feeds a recorded stream through an engine without any operator.
pub fn replay_into(engine: &mut Engine, messages: &[WireMessage]) -> Result<Vec<LogRecord>> {
    let mut log = Vec::new();
    for m in messages {
        log.extend(engine.handle_event(Event::from(m.clone()))?);
    }
    Ok(log)
}
