//! Execution observers, split by which side of the process boundary they run on.
//!
//! Remote observers are described by a serializable [`RemoteObserverConfig`],
//! instantiated inside whichever process runs the test body, and reduce what
//! they saw to an [`ObservationPayload`]. Main observers live in the
//! orchestrating process, may keep state across executions, and never cross
//! the boundary.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::executor::Execution;
use crate::target::Value;
use crate::testcase::{Statement, TestCase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationPayload {
    pub observer: String,
    pub data: serde_json::Value,
}

/// What a remote observer sees after each statement.
pub struct StatementObservation<'a> {
    pub status: i32,
    pub ret: &'a Value,
}

pub trait RemoteObserver: Send {
    fn before_statement(&mut self, _stmt: &Statement) {}
    fn after_statement(&mut self, _stmt: &Statement, _obs: &StatementObservation<'_>) {}
    fn finish(self: Box<Self>) -> ObservationPayload;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemoteObserverConfig {
    /// Wall-clock nanoseconds spent in each statement.
    StatementTimings,
    /// Scalar values returned by each statement (`null` for void, handles, bytes).
    ReturnValues,
}

impl RemoteObserverConfig {
    pub fn instantiate(&self) -> Box<dyn RemoteObserver> {
        match self {
            RemoteObserverConfig::StatementTimings => {
                Box::new(StatementTimings { started: None, nanos: Vec::new() })
            }
            RemoteObserverConfig::ReturnValues => Box::new(ReturnValues(Vec::new())),
        }
    }

    pub fn encode(configs: &[RemoteObserverConfig]) -> String {
        serde_json::to_string(configs).expect("observer configs serialize")
    }

    pub fn decode(text: &str) -> Result<Vec<RemoteObserverConfig>, serde_json::Error> {
        serde_json::from_str(text)
    }
}

struct StatementTimings {
    started: Option<Instant>,
    nanos: Vec<u64>,
}

impl RemoteObserver for StatementTimings {
    fn before_statement(&mut self, _stmt: &Statement) {
        self.started = Some(Instant::now());
    }

    fn after_statement(&mut self, _stmt: &Statement, _obs: &StatementObservation<'_>) {
        if let Some(t) = self.started.take() {
            self.nanos.push(t.elapsed().as_nanos() as u64);
        }
    }

    fn finish(self: Box<Self>) -> ObservationPayload {
        ObservationPayload { observer: "statement_timings".into(), data: self.nanos.into() }
    }
}

struct ReturnValues(Vec<serde_json::Value>);

impl RemoteObserver for ReturnValues {
    fn after_statement(&mut self, _stmt: &Statement, obs: &StatementObservation<'_>) {
        let v = match obs.ret {
            Value::Int(i) => (*i).into(),
            Value::Float(f) => serde_json::Number::from_f64(*f)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null),
            _ => serde_json::Value::Null,
        };
        self.0.push(v);
    }

    fn finish(self: Box<Self>) -> ObservationPayload {
        ObservationPayload { observer: "return_values".into(), data: self.0.into() }
    }
}

pub trait MainObserver {
    fn on_execution(&mut self, tc: &TestCase, execution: &Execution);
}

/// Counts executions by outcome. Handy for logging and tests.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct OutcomeCounter {
    pub completed: u64,
    pub managed_errors: u64,
    pub crashed: u64,
    pub timed_out: u64,
}

impl MainObserver for OutcomeCounter {
    fn on_execution(&mut self, _tc: &TestCase, execution: &Execution) {
        use crate::executor::ExecStatus::*;
        match execution.result.status {
            Completed => self.completed += 1,
            ManagedError { .. } => self.managed_errors += 1,
            Crashed { .. } => self.crashed += 1,
            TimedOut => self.timed_out += 1,
        }
    }
}
