//! Scripted stand-in for the human operator.

use rand::Rng;

use crate::alarm::{Alarm, Disposition};
use crate::event::OperatorFeedback;
use crate::sim::config::OperatorAgentConfig;
use crate::sim::truth::Label;

/// How the operator reacts to an alarm, given what actually happened.
pub fn respond_disposition(label: Label, config: &OperatorAgentConfig, rng: &mut impl Rng) -> Disposition {
    match label {
        Label::TrueFault(_) => {
            let u: f64 = rng.random();
            if u < config.p_accept_true {
                Disposition::Accepted
            } else if u < config.p_accept_true + config.p_overlook_true {
                Disposition::Overlooked
            } else {
                Disposition::Rejected
            }
        }
        Label::DriftInduced if config.reject_drift_alarms => Disposition::Rejected,
        Label::DriftInduced | Label::Clean => {
            if rng.random_bool(config.p_reject_false) {
                Disposition::Rejected
            } else {
                Disposition::Overlooked
            }
        }
    }
}

pub fn operator_agent_respond(
    alarm: &Alarm,
    label: Label,
    config: &OperatorAgentConfig,
    rng: &mut impl Rng,
) -> OperatorFeedback {
    OperatorFeedback {
        ts: alarm.ts + config.response_delay_seconds,
        alarm_id: alarm.alarm_id.clone(),
        disposition: respond_disposition(label, config, rng),
        machine_id: None,
    }
}
