//! Crash triage: replay candidates in fresh workers, drop what does not
//! reproduce or is excluded, and group the rest into unique causes keyed by
//! the crashing statement and exit code.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{ExecStatus, ExecutionResult, TestExecutor};
use crate::reproducer::Reproducer;
use crate::search::CrashRecord;
use crate::signals::signal_name;
use crate::testcase::{StatementLocator, TestCase};

pub const DEFAULT_REPLAY_RUNS: u32 = 5;
pub const DEFAULT_REPLAY_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FaultClass {
    SegmentationFault,
    Aborted,
    IllegalInstruction,
    BusError,
    FloatingPointException,
    Timeout,
}

impl FaultClass {
    pub fn label(self) -> &'static str {
        match self {
            FaultClass::SegmentationFault => "Segmentation fault",
            FaultClass::Aborted => "Aborted",
            FaultClass::IllegalInstruction => "Illegal instruction",
            FaultClass::BusError => "Bus error",
            FaultClass::FloatingPointException => "Floating-point exception",
            FaultClass::Timeout => "Timeout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("unknown exit code {0:?}")]
pub struct UnknownExitCode(pub Option<i32>);

/// Maps an exit code (negative signal convention) to a fault class.
pub fn classify(exit_code: Option<i32>, timed_out: bool) -> Result<FaultClass, UnknownExitCode> {
    if timed_out {
        return Ok(FaultClass::Timeout);
    }
    match exit_code.map(|c| -c) {
        Some(libc::SIGSEGV) => Ok(FaultClass::SegmentationFault),
        Some(libc::SIGABRT) => Ok(FaultClass::Aborted),
        Some(libc::SIGILL) => Ok(FaultClass::IllegalInstruction),
        Some(libc::SIGBUS) => Ok(FaultClass::BusError),
        Some(libc::SIGFPE) => Ok(FaultClass::FloatingPointException),
        _ => Err(UnknownExitCode(exit_code)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashReport {
    pub testcase: TestCase,
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub signal_name: Option<String>,
    pub locator: Option<StatementLocator>,
    pub reproduced: bool,
    pub replay_runs: u32,
    /// First replay failure, if any.
    pub note: Option<String>,
}

impl CrashReport {
    /// A report taken at face value, without replays.
    pub fn unconfirmed(record: &CrashRecord) -> Self {
        let exit_code = record.result.exit_code;
        CrashReport {
            testcase: record.testcase.clone(),
            exit_code,
            timed_out: exit_code.is_none(),
            signal_name: exit_code.and_then(|c| signal_name(-c)).map(str::to_string),
            locator: record.result.last_statement.clone(),
            reproduced: false,
            replay_runs: 0,
            note: None,
        }
    }
}

/// Rebuilds a crash candidate from an exported reproducer.
pub fn candidate_from_reproducer(r: &Reproducer) -> CrashRecord {
    let status = match r.expected_exit_code {
        None => ExecStatus::TimedOut,
        Some(c) if c < 0 => ExecStatus::Crashed { signal: -c },
        Some(_) => ExecStatus::Completed,
    };
    CrashRecord {
        testcase: r.testcase.clone(),
        result: ExecutionResult {
            status,
            exit_code: r.expected_exit_code,
            edge_hits: Vec::new(),
            last_statement: r.expected_locator.clone(),
            per_statement_status: Vec::new(),
            wall_time: Duration::ZERO,
        },
        injected: false,
    }
}

/// Replays each candidate `runs` times. A candidate is reproduced when every
/// replay shows the recorded exit code (or a timeout) at the recorded locator.
pub fn confirm(
    candidates: &[CrashRecord],
    runs: u32,
    timeout: Duration,
    executor: &mut dyn TestExecutor,
) -> Vec<CrashReport> {
    assert!(runs >= 1, "at least one replay is required");
    candidates
        .iter()
        .map(|record| {
            let mut report = CrashReport::unconfirmed(record);
            report.replay_runs = runs;
            let mut all_match = true;
            for run in 0..runs {
                match executor.execute(&record.testcase, &[], timeout, None) {
                    Ok(exec) => {
                        let r = exec.result;
                        if r.exit_code != report.exit_code || r.last_statement != report.locator {
                            all_match = false;
                            report.note.get_or_insert_with(|| {
                                format!("replay {run} observed exit {:?} at {:?}", r.exit_code, r.last_statement)
                            });
                        }
                    }
                    Err(e) => {
                        all_match = false;
                        report.note.get_or_insert_with(|| format!("replay {run} failed: {e}"));
                    }
                }
                if !all_match {
                    break;
                }
            }
            report.reproduced = all_match;
            report
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionConfig {
    pub excluded_callees: BTreeSet<String>,
    /// Keep SIGKILL deaths, which under the address-space cap are OOM kills.
    pub keep_oom: bool,
}

pub fn is_oom_kill(report: &CrashReport) -> bool {
    report.exit_code == Some(-libc::SIGKILL)
}

pub fn filter_exclusions(reports: Vec<CrashReport>, config: &ExclusionConfig) -> Vec<CrashReport> {
    reports
        .into_iter()
        .filter(|r| {
            let excluded = r
                .locator
                .as_ref()
                .is_some_and(|l| config.excluded_callees.contains(&l.callee_symbol));
            !excluded && (config.keep_oom || !is_oom_kill(r))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DedupeKey {
    /// Crashing function and exit code.
    #[default]
    Callee,
    /// Crashing function, its position in the test, and exit code.
    CalleeIndex,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CauseKey {
    pub callee: Option<String>,
    pub statement_index: Option<usize>,
    pub exit_code: Option<i32>,
}

impl CauseKey {
    fn of(report: &CrashReport, mode: DedupeKey) -> Self {
        CauseKey {
            callee: report.locator.as_ref().map(|l| l.callee_symbol.clone()),
            statement_index: match mode {
                DedupeKey::Callee => None,
                DedupeKey::CalleeIndex => report.locator.as_ref().map(|l| l.statement_index),
            },
            exit_code: report.exit_code,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashCause {
    pub key: CauseKey,
    /// `None` when the exit code is outside the classification table.
    pub fault_class: Option<FaultClass>,
    pub signal_name: Option<String>,
    pub representative: TestCase,
    pub representative_locator: Option<StatementLocator>,
    pub member_count: usize,
}

impl CrashCause {
    pub fn exit_code(&self) -> Option<i32> {
        self.key.exit_code
    }

    /// The representative as a confirmed report.
    pub fn to_report(&self) -> CrashReport {
        CrashReport {
            testcase: self.representative.clone(),
            exit_code: self.key.exit_code,
            timed_out: self.key.exit_code.is_none(),
            signal_name: self.signal_name.clone(),
            locator: self.representative_locator.clone(),
            reproduced: true,
            replay_runs: 0,
            note: None,
        }
    }
}

fn representative_order(r: &CrashReport) -> (usize, u64, Vec<u8>, Option<usize>) {
    (r.testcase.len(), r.testcase.id(), r.testcase.to_bytes(), r.locator.as_ref().map(|l| l.statement_index))
}

/// Groups reproduced reports into causes, ordered by key. Unreproduced
/// reports are ignored.
pub fn dedupe(reports: &[CrashReport], mode: DedupeKey) -> Vec<CrashCause> {
    let mut groups: BTreeMap<CauseKey, (usize, &CrashReport)> = BTreeMap::new();
    for r in reports.iter().filter(|r| r.reproduced) {
        groups
            .entry(CauseKey::of(r, mode))
            .and_modify(|(count, best)| {
                *count += 1;
                if representative_order(r) < representative_order(best) {
                    *best = r;
                }
            })
            .or_insert((1, r));
    }
    groups
        .into_iter()
        .map(|(key, (member_count, best))| CrashCause {
            fault_class: classify(key.exit_code, key.exit_code.is_none()).ok(),
            signal_name: key.exit_code.and_then(|c| signal_name(-c)).map(str::to_string),
            representative: best.testcase.clone(),
            representative_locator: best.locator.clone(),
            member_count,
            key,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageConfig {
    pub replay_runs: u32,
    pub replay_timeout: Duration,
    pub dedupe_key: DedupeKey,
    pub exclusions: ExclusionConfig,
}

impl Default for TriageConfig {
    fn default() -> Self {
        TriageConfig {
            replay_runs: DEFAULT_REPLAY_RUNS,
            replay_timeout: DEFAULT_REPLAY_TIMEOUT,
            dedupe_key: DedupeKey::Callee,
            exclusions: ExclusionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageReport {
    pub candidates: usize,
    pub reproduced: usize,
    pub excluded: usize,
    pub causes: Vec<CrashCause>,
    pub reports: Vec<CrashReport>,
}

/// confirm, filter, dedupe.
pub fn triage(candidates: &[CrashRecord], config: &TriageConfig, executor: &mut dyn TestExecutor) -> TriageReport {
    let reports = confirm(candidates, config.replay_runs, config.replay_timeout, executor);
    let reproduced = reports.iter().filter(|r| r.reproduced).count();
    let kept = filter_exclusions(reports.clone(), &config.exclusions);
    let excluded = reports.len() - kept.len();
    TriageReport {
        candidates: candidates.len(),
        reproduced,
        excluded,
        causes: dedupe(&kept, config.dedupe_key),
        reports,
    }
}

impl TriageReport {
    /// Unique causes per fault class: class, exit code, signal, count, share.
    pub fn table(&self) -> String {
        fault_table(&self.causes)
    }
}

pub fn fault_table(causes: &[CrashCause]) -> String {
    let mut rows: BTreeMap<(Option<FaultClass>, Option<i32>), usize> = BTreeMap::new();
    for c in causes {
        *rows.entry((c.fault_class, c.key.exit_code)).or_default() += 1;
    }
    let total = causes.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(out, "{:<26} {:>9} {:>9} {:>6} {:>8}", "fault type", "exit code", "signal", "count", "share");
    for ((class, code), count) in &rows {
        let label = class.map_or("Unknown exit code", |c| c.label());
        let code_s = code.map_or("None".to_string(), |c| c.to_string());
        let sig = code.and_then(|c| signal_name(-c)).unwrap_or("N/A");
        let _ = writeln!(
            out,
            "{label:<26} {code_s:>9} {sig:>9} {count:>6} {:>7.1}%",
            100.0 * *count as f64 / total
        );
    }
    let _ = writeln!(out, "{:<26} {:>9} {:>9} {:>6} {:>7.1}%", "total", "", "", causes.len(), if causes.is_empty() { 0.0 } else { 100.0 });
    out
}
