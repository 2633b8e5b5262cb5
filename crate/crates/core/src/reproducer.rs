//! Standalone reproducer files: a test case plus the outcome it is expected
//! to produce. Format in `docs/reproducer.md`.

use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{ExecError, ExecutionResult, TestExecutor};
use crate::manifest::TargetManifest;
use crate::testcase::{StatementLocator, TestCase, TestCaseError};

pub const REPRODUCER_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("reproducer was recorded against {expected}, target hashes to {actual}")]
    HashMismatch { expected: String, actual: String },
    #[error("cannot decode reproducer: {0}")]
    Decode(String),
    #[error("io on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Exec(#[from] ExecError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reproducer {
    pub schema: u32,
    pub target_id: String,
    pub manifest_hash: String,
    pub testcase: TestCase,
    /// `None` means the test is expected to time out.
    pub expected_exit_code: Option<i32>,
    pub expected_locator: Option<StatementLocator>,
}

impl Reproducer {
    pub fn new(manifest: &TargetManifest, testcase: TestCase, result: &ExecutionResult) -> Self {
        Reproducer::expecting(manifest, testcase, result.exit_code, result.last_statement.clone())
    }

    pub fn expecting(
        manifest: &TargetManifest,
        testcase: TestCase,
        expected_exit_code: Option<i32>,
        expected_locator: Option<StatementLocator>,
    ) -> Self {
        Reproducer {
            schema: REPRODUCER_SCHEMA,
            target_id: manifest.target_id.clone(),
            manifest_hash: manifest.hash(),
            testcase,
            expected_exit_code,
            expected_locator,
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("reproducers serialize");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, ReplayError> {
        let r: Reproducer = serde_json::from_str(text).map_err(|e| ReplayError::Decode(e.to_string()))?;
        if r.schema != REPRODUCER_SCHEMA {
            return Err(ReplayError::Decode(format!("unsupported schema {}", r.schema)));
        }
        // Re-validate through the canonical decoder.
        TestCase::from_bytes(&r.testcase.to_bytes()).map_err(|e: TestCaseError| ReplayError::Decode(e.to_string()))?;
        Ok(r)
    }

    pub fn read(path: &Path) -> Result<Self, ReplayError> {
        let text = fs::read_to_string(path)
            .map_err(|source| ReplayError::Io { path: path.display().to_string(), source })?;
        Reproducer::from_json(&text)
    }

    pub fn write(&self, path: &Path) -> Result<(), ReplayError> {
        fs::write(path, self.to_json()).map_err(|source| ReplayError::Io { path: path.display().to_string(), source })
    }

    pub fn check_target(&self, manifest: &TargetManifest) -> Result<(), ReplayError> {
        let actual = manifest.hash();
        if actual != self.manifest_hash {
            return Err(ReplayError::HashMismatch { expected: self.manifest_hash.clone(), actual });
        }
        self.testcase
            .check(manifest, self.testcase.len())
            .map_err(|e| ReplayError::Decode(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub observed: ExecutionResult,
    pub reproduced: bool,
}

impl ReplayOutcome {
    /// One-line summary, e.g. `reproduced: signal 11`.
    pub fn summary(&self) -> String {
        if !self.reproduced {
            return "not reproduced".into();
        }
        match self.observed.exit_code {
            None => "reproduced: timeout".into(),
            Some(code) if code < 0 => format!("reproduced: signal {}", -code),
            Some(code) => format!("reproduced: exit {code}"),
        }
    }
}

/// Replays `repro` once with `executor`, which should be a subprocess executor.
pub fn replay(
    repro: &Reproducer,
    manifest: &TargetManifest,
    executor: &mut dyn TestExecutor,
    timeout: Duration,
) -> Result<ReplayOutcome, ReplayError> {
    repro.check_target(manifest)?;
    let observed = executor.execute(&repro.testcase, &[], timeout, None)?.result;
    let reproduced =
        observed.exit_code == repro.expected_exit_code && observed.last_statement == repro.expected_locator;
    Ok(ReplayOutcome { observed, reproduced })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::{ExecStatus, ThreadedExecutor};
    use crate::target::builtin;
    use crate::testcase::{Arg, Statement};
    use std::sync::Arc;

    fn sample() -> (TargetManifest, Reproducer) {
        let m = builtin::manifest("arith").unwrap();
        let tc = TestCase::new(
            9,
            4,
            vec![Statement { index: 0, callee: "add".into(), args: vec![Arg::Int(1), Arg::Int(2)] }],
        )
        .unwrap();
        let r = Reproducer {
            schema: 1,
            target_id: m.target_id.clone(),
            manifest_hash: m.hash(),
            testcase: tc.clone(),
            expected_exit_code: Some(0),
            expected_locator: tc.locator(0),
        };
        (m, r)
    }

    #[test]
    fn json_round_trip() {
        let (_, r) = sample();
        let text = r.to_json();
        assert_eq!(Reproducer::from_json(&text).unwrap(), r);
        assert!(text.contains("\"expected_exit_code\": 0"));
        let bad = text.replace("\"schema\": 1", "\"schema\": 2");
        assert!(matches!(Reproducer::from_json(&bad), Err(ReplayError::Decode(_))));
        let extra = text.replacen('{', "{\"x\": 1,", 1);
        assert!(Reproducer::from_json(&extra).is_err());
    }

    #[test]
    fn replay_checks_hash_and_outcome() {
        let (m, r) = sample();
        let mut ex = ThreadedExecutor::new(Arc::new(m.clone())).unwrap();
        let out = replay(&r, &m, &mut ex, Duration::from_secs(5)).unwrap();
        assert!(out.reproduced);
        assert_eq!(out.observed.status, ExecStatus::Completed);
        assert_eq!(out.summary(), "reproduced: exit 0");

        let mut wrong = r.clone();
        wrong.expected_exit_code = Some(-6);
        let out = replay(&wrong, &m, &mut ex, Duration::from_secs(5)).unwrap();
        assert_eq!(out.summary(), "not reproduced");

        let other = builtin::manifest("branchy").unwrap();
        assert!(matches!(
            replay(&r, &other, &mut ex, Duration::from_secs(5)),
            Err(ReplayError::HashMismatch { .. })
        ));
    }
}
