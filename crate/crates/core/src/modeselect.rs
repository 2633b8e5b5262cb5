//! Execution-mode policies and the master/search-worker supervisor.
//!
//! Every supervised run executes the search in a separate `search-worker`
//! process. The master sends one start message and expects one finish
//! message. Under the fallback policies an abnormal death of a threaded
//! search-worker triggers a single restart in subprocess mode with whatever
//! budget is left.

use std::collections::BTreeSet;
use std::io::{self, BufReader};
use std::path::PathBuf;
use std::process::{ExitStatus, Stdio};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{
    ExecutionMode, SubprocessExecutor, SubprocessOptions, TestExecutor, ThreadedExecutor,
    WorkerLauncher, DEFAULT_ADDRESS_SPACE_LIMIT,
};
use crate::ipc::{self, FrameError, PROTOCOL_SCHEMA};
use crate::manifest::{classify_hazard, parse_manifest, HazardClass, TargetManifest};
use crate::search::{run_search, FaultPlan, SearchConfig, SearchError, SearchOutcome};
use crate::signals::harden_worker;
use crate::worker::take_protocol_stdout;

/// Search-worker exit status after too many consecutive in-process timeouts.
pub const TAINT_EXIT: i32 = 70;
pub const DEFAULT_GRACE: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RequestedMode {
    Threaded,
    Subprocess,
    Heuristic,
    Fallback,
    FallbackHeuristic,
}

impl std::fmt::Display for RequestedMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RequestedMode::Threaded => "threaded",
            RequestedMode::Subprocess => "subprocess",
            RequestedMode::Heuristic => "heuristic",
            RequestedMode::Fallback => "fallback",
            RequestedMode::FallbackHeuristic => "fallback-heuristic",
        })
    }
}

impl RequestedMode {
    pub fn permits_restart(self) -> bool {
        matches!(self, RequestedMode::Fallback | RequestedMode::FallbackHeuristic)
    }
}

/// The mode the first phase runs in.
pub fn resolve_initial_mode(
    requested: RequestedMode,
    manifest: &TargetManifest,
    whitelist: &BTreeSet<String>,
) -> ExecutionMode {
    let by_hazard = || match classify_hazard(manifest, whitelist) {
        HazardClass::Native => ExecutionMode::Subprocess,
        HazardClass::Pure => ExecutionMode::Threaded,
    };
    match requested {
        RequestedMode::Threaded | RequestedMode::Fallback => ExecutionMode::Threaded,
        RequestedMode::Subprocess => ExecutionMode::Subprocess,
        RequestedMode::Heuristic | RequestedMode::FallbackHeuristic => by_hazard(),
    }
}

#[derive(Debug, Error)]
pub enum SupervisorError {
    #[error("search budget must be positive")]
    ZeroBudget,
    #[error("cannot spawn search worker {program}: {source}")]
    Spawn {
        program: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("search worker protocol: {0}")]
    Protocol(String),
    #[error("search failed: {0}")]
    Search(String),
}

#[derive(Debug, Clone)]
pub struct SupervisorConfig {
    pub requested: RequestedMode,
    pub search: SearchConfig,
    pub whitelist: BTreeSet<String>,
    pub grace: Duration,
    pub max_restarts: u32,
    pub launcher: WorkerLauncher,
    pub address_space_limit: Option<u64>,
    /// Consecutive in-process timeouts that count as a crash under fallback.
    pub taint_limit: u32,
}

impl SupervisorConfig {
    pub fn new(requested: RequestedMode, search: SearchConfig, launcher: WorkerLauncher) -> Self {
        SupervisorConfig {
            requested,
            search,
            whitelist: BTreeSet::new(),
            grace: DEFAULT_GRACE,
            max_restarts: 1,
            launcher,
            address_space_limit: Some(DEFAULT_ADDRESS_SPACE_LIMIT),
            taint_limit: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModePolicy {
    pub requested: RequestedMode,
    pub resolved_initial: ExecutionMode,
    pub restarted: bool,
    pub budget_total: Duration,
    pub budget_consumed_before_restart: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhaseEnd {
    Finished,
    Crashed { signal: i32 },
    Exited { code: i32 },
    Tainted,
    Hung,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub index: u32,
    pub mode: ExecutionMode,
    pub seed: u64,
    pub budget: Duration,
    /// Master-side wall clock from spawn to exit.
    pub elapsed: Duration,
    pub end: PhaseEnd,
    /// Zero for phases that did not finish.
    pub coverage: f64,
    pub start_messages: u32,
    pub finish_messages: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedOutcome {
    pub policy: ModePolicy,
    pub phases: Vec<PhaseRecord>,
    /// Result of the last phase, if it finished.
    pub search: Option<SearchOutcome>,
}

impl SupervisedOutcome {
    pub fn crashed(&self) -> bool {
        self.search.is_none()
    }

    pub fn coverage(&self) -> f64 {
        self.search.as_ref().map_or(0.0, |s| s.coverage())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StartMessage {
    pub schema: u32,
    pub phase: u32,
    pub mode: ExecutionMode,
    pub manifest: String,
    pub manifest_dir: Option<PathBuf>,
    pub manifest_hash: String,
    pub search: SearchConfig,
    pub worker_program: PathBuf,
    pub address_space_limit: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinishMessage {
    pub outcome: Option<SearchOutcome>,
    pub error: Option<String>,
}

/// Phase seeds share the base stream, offset by phase index.
pub fn phase_seed(base: u64, phase: u32) -> u64 {
    base.wrapping_add(phase as u64)
}

fn classify_exit(status: &ExitStatus) -> PhaseEnd {
    use std::os::unix::process::ExitStatusExt;
    match (status.signal(), status.code()) {
        (Some(signal), _) => PhaseEnd::Crashed { signal },
        (None, Some(TAINT_EXIT)) => PhaseEnd::Tainted,
        (None, Some(code)) => PhaseEnd::Exited { code },
        (None, None) => PhaseEnd::Exited { code: -1 },
    }
}

struct PhaseRun {
    record: PhaseRecord,
    outcome: Option<SearchOutcome>,
}

fn run_phase(
    config: &SupervisorConfig,
    manifest: &TargetManifest,
    index: u32,
    mode: ExecutionMode,
    budget: Duration,
    fault_plan: Option<FaultPlan>,
) -> Result<PhaseRun, SupervisorError> {
    let mut search = config.search.clone();
    search.budget = budget;
    search.seed = phase_seed(config.search.seed, index);
    search.fault_plan = fault_plan;
    search.taint_limit = (mode == ExecutionMode::Threaded && config.requested.permits_restart())
        .then_some(config.taint_limit);
    let start = StartMessage {
        schema: PROTOCOL_SCHEMA,
        phase: index,
        mode,
        manifest: manifest.to_json(),
        manifest_dir: manifest.source_dir.clone(),
        manifest_hash: manifest.hash(),
        search: search.clone(),
        worker_program: config.launcher.program.clone(),
        address_space_limit: config.address_space_limit,
    };

    let mut cmd = config.launcher.command("search-worker");
    cmd.stderr(Stdio::inherit());
    let started = Instant::now();
    let mut child = cmd.spawn().map_err(|source| SupervisorError::Spawn {
        program: config.launcher.program.clone(),
        source,
    })?;
    log::info!("phase {index}: {mode} search for {budget:?} in pid {}", child.id());
    let mut stdin = child.stdin.take().expect("stdin is piped");
    let sent = ipc::write_frame(&mut stdin, &start).is_ok();
    drop(stdin);

    let mut stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));
    let (tx, rx) = mpsc::channel::<Result<FinishMessage, FrameError>>();
    let reader = thread::spawn(move || {
        let _ = tx.send(ipc::read_frame(&mut stdout));
    });
    let finish = match rx.recv_timeout(budget + config.grace) {
        Ok(msg) => Some(msg),
        Err(_) => {
            let _ = child.kill();
            None
        }
    };
    let status = child.wait().map_err(|e| SupervisorError::Protocol(format!("wait failed: {e}")))?;
    let elapsed = started.elapsed();
    let _ = reader.join();

    let mut record = PhaseRecord {
        index,
        mode,
        seed: search.seed,
        budget,
        elapsed,
        end: PhaseEnd::Hung,
        coverage: 0.0,
        start_messages: u32::from(sent),
        finish_messages: 0,
    };
    match finish {
        None => Ok(PhaseRun { record, outcome: None }),
        Some(Ok(msg)) => {
            record.finish_messages = 1;
            if let Some(error) = msg.error {
                return Err(SupervisorError::Search(error));
            }
            let outcome = msg
                .outcome
                .ok_or_else(|| SupervisorError::Protocol("finish message without outcome".into()))?;
            record.end = PhaseEnd::Finished;
            record.coverage = outcome.coverage();
            Ok(PhaseRun { record, outcome: Some(outcome) })
        }
        Some(Err(_)) => {
            record.end = classify_exit(&status);
            if record.end == (PhaseEnd::Exited { code: 0 }) {
                return Err(SupervisorError::Protocol("search worker exited without a finish message".into()));
            }
            Ok(PhaseRun { record, outcome: None })
        }
    }
}

/// Runs the whole search under `config.requested`, restarting once in
/// subprocess mode when the policy allows it and the first phase dies.
pub fn run_supervised(config: &SupervisorConfig, manifest: &TargetManifest) -> Result<SupervisedOutcome, SupervisorError> {
    let total = config.search.budget;
    if total.is_zero() {
        return Err(SupervisorError::ZeroBudget);
    }
    let initial = resolve_initial_mode(config.requested, manifest, &config.whitelist);
    let mut policy = ModePolicy {
        requested: config.requested,
        resolved_initial: initial,
        restarted: false,
        budget_total: total,
        budget_consumed_before_restart: Duration::ZERO,
    };
    let mut phases = Vec::new();
    let first = run_phase(config, manifest, 0, initial, total, config.search.fault_plan)?;
    let mut consumed = first.record.elapsed;
    let mut last = first.outcome;
    phases.push(first.record);

    let mut restarts = 0;
    while last.is_none() && config.requested.permits_restart() && restarts < config.max_restarts {
        let Some(remaining) = total.checked_sub(consumed).filter(|r| !r.is_zero()) else {
            log::warn!("search worker died with no budget left; recording the crash");
            break;
        };
        restarts += 1;
        policy.restarted = true;
        policy.budget_consumed_before_restart = consumed.min(total);
        log::warn!(
            "search worker ended abnormally ({:?}); restarting in subprocess mode with {remaining:?}",
            phases.last().map(|p: &PhaseRecord| &p.end)
        );
        // A one-shot injected fault has already fired.
        let plan = match config.search.fault_plan {
            Some(FaultPlan::AtElapsed { .. }) => None,
            other => other,
        };
        let phase = run_phase(config, manifest, restarts, ExecutionMode::Subprocess, remaining, plan)?;
        consumed += phase.record.elapsed;
        last = phase.outcome;
        phases.push(phase.record);
    }
    Ok(SupervisedOutcome { policy, phases, search: last })
}

fn search_worker_main(start: StartMessage) -> Result<SearchOutcome, SearchError> {
    let mut manifest = parse_manifest(&start.manifest)
        .map_err(|e| SearchError::Exec(crate::executor::ExecError::InvalidRequest(e.to_string())))?;
    manifest.source_dir = start.manifest_dir;
    let manifest = Arc::new(manifest);
    let mut executor: Box<dyn TestExecutor> = match start.mode {
        ExecutionMode::Threaded => Box::new(ThreadedExecutor::new(manifest.clone())?),
        ExecutionMode::Subprocess => Box::new(SubprocessExecutor::new(
            WorkerLauncher::new(start.worker_program),
            manifest.clone(),
            SubprocessOptions { address_space_limit: start.address_space_limit, ..Default::default() },
        )),
    };
    run_search(&start.search, &manifest, executor.as_mut(), &mut [])
}

/// Entry point of `isoharness search-worker`.
pub fn run_search_worker() -> i32 {
    harden_worker(None);
    let mut out = match take_protocol_stdout() {
        Ok(f) => f,
        Err(e) => {
            eprintln!("search-worker: {e}");
            return 3;
        }
    };
    let stdin = io::stdin();
    let start: StartMessage = match ipc::read_frame(&mut stdin.lock()) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("search-worker: bad start message: {e}");
            return 3;
        }
    };
    if start.schema != PROTOCOL_SCHEMA {
        eprintln!("search-worker: protocol schema {} unsupported", start.schema);
        return 3;
    }
    let finish = match search_worker_main(start) {
        Ok(outcome) => FinishMessage { outcome: Some(outcome), error: None },
        Err(SearchError::Tainted(n)) => {
            eprintln!("search-worker: {n} consecutive in-process timeouts");
            return TAINT_EXIT;
        }
        Err(e) => FinishMessage { outcome: None, error: Some(e.to_string()) },
    };
    match ipc::write_frame(&mut out, &finish) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("search-worker: {e}");
            3
        }
    }
}
