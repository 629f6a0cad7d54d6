//! Deterministic synthetic telemetry with fault and drift injection, a
//! scripted operator and ground-truth labels.

pub mod agent;
pub mod config;
pub mod generate;
pub mod harness;
pub mod truth;

pub use agent::{operator_agent_respond, respond_disposition};
pub use config::{DriftEvent, FaultInjection, Gauss, OperationProfile, OperatorAgentConfig, Scenario, SimConfig};
pub use generate::{generate_run, SimTrace};
pub use harness::{replay_into, run_closed_loop, ClosedLoopRun};
pub use truth::{DriftWindow, FaultKind, FaultRecord, GroundTruth, Label};
