//! Test execution in two models.
//!
//! * [`ThreadedExecutor`] runs the test body on a watchdog-supervised thread
//!   inside this process. It is fast, but a fatal signal raised by the target
//!   kills the whole process. That is the contract, not a bug.
//! * [`SubprocessExecutor`] spawns a fresh worker (`<harness> worker --shm
//!   <path>`) per test. The worker runs the same threaded body; edge counters
//!   and the progress marker live in a shared segment so they survive the
//!   worker's death, and the supervisor always gets a result.

use std::io;
use std::path::PathBuf;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ipc::{self, FrameError, Handshake, HandshakeAck, TestReply, TestRequest, PROTOCOL_SCHEMA};
use crate::manifest::TargetManifest;
use crate::observer::{ObservationPayload, RemoteObserver, RemoteObserverConfig, StatementObservation};
use crate::shm::{default_shm_dir, CoverageMap, ShmError};
use crate::signals::{raise_fatal, SUPPORTED_SIGNALS};
use crate::target::{load_target, LoadError, Target, Value};
use crate::testcase::{Arg, StatementLocator, TestCase};

pub const WORKER_PATH_ENV: &str = "ISOHARNESS_WORKER_PATH";
pub const WORKER_STDERR_ENV: &str = "ISOHARNESS_WORKER_STDERR";
pub const DEFAULT_TEST_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_ADDRESS_SPACE_LIMIT: u64 = 2 << 30;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("signal {0} cannot be injected")]
    UnsupportedSignal(i32),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cannot spawn worker {program}: {source}")]
    WorkerSpawn {
        program: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("worker protocol: {0}")]
    Protocol(String),
    #[error("worker rejected the request: {0}")]
    Worker(String),
    #[error(transparent)]
    Shm(#[from] ShmError),
    #[error("executor thread died: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionMode {
    Threaded,
    Subprocess,
}

impl std::fmt::Display for ExecutionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExecutionMode::Threaded => "threaded",
            ExecutionMode::Subprocess => "subprocess",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExecStatus {
    Completed,
    ManagedError { code: i32 },
    Crashed { signal: i32 },
    TimedOut,
}

impl ExecStatus {
    /// Exit code convention: 0 for a normal worker exit, `-N` for death by
    /// signal N, none for a timeout.
    pub fn exit_code(&self) -> Option<i32> {
        match self {
            ExecStatus::Completed | ExecStatus::ManagedError { .. } => Some(0),
            ExecStatus::Crashed { signal } => Some(-signal),
            ExecStatus::TimedOut => None,
        }
    }

    /// Crashes and timeouts reveal faults; everything else finished normally.
    pub fn is_fault(&self) -> bool {
        matches!(self, ExecStatus::Crashed { .. } | ExecStatus::TimedOut)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StatementStatus {
    Ok,
    ManagedError { code: i32 },
    Crashed,
    TimedOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub status: ExecStatus,
    pub exit_code: Option<i32>,
    pub edge_hits: Vec<u64>,
    pub last_statement: Option<StatementLocator>,
    pub per_statement_status: Vec<StatementStatus>,
    #[serde(rename = "wall_time_us", with = "micros")]
    pub wall_time: Duration,
}

mod micros {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_micros() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_micros(u64::deserialize(d)?))
    }
}

impl ExecutionResult {
    pub fn covered_edges(&self) -> impl Iterator<Item = usize> + '_ {
        self.edge_hits.iter().enumerate().filter(|(_, &h)| h > 0).map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub result: ExecutionResult,
    pub payloads: Vec<ObservationPayload>,
    /// Set for subprocess executions.
    pub worker_pid: Option<u32>,
}

/// A self-test fault: the body raises `raise_signal` immediately before
/// statement `at_statement` starts, so the progress marker still points at
/// the previous statement. If a managed error ends the test earlier, the
/// signal is raised when the body stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticFault {
    pub raise_signal: i32,
    pub at_statement: usize,
}

impl SyntheticFault {
    pub fn new(raise_signal: i32, at_statement: usize) -> Result<Self, ExecError> {
        if !SUPPORTED_SIGNALS.contains(&raise_signal) {
            return Err(ExecError::UnsupportedSignal(raise_signal));
        }
        Ok(SyntheticFault { raise_signal, at_statement })
    }

    fn check(&self, tc: &TestCase) -> Result<(), ExecError> {
        if !SUPPORTED_SIGNALS.contains(&self.raise_signal) {
            return Err(ExecError::UnsupportedSignal(self.raise_signal));
        }
        if self.at_statement >= tc.len() {
            return Err(ExecError::InvalidRequest(format!(
                "fault at statement {} but the test has {}",
                self.at_statement,
                tc.len()
            )));
        }
        Ok(())
    }
}

pub trait TestExecutor {
    fn mode(&self) -> ExecutionMode;

    fn execute(
        &mut self,
        tc: &TestCase,
        observers: &[RemoteObserverConfig],
        timeout: Duration,
        fault: Option<SyntheticFault>,
    ) -> Result<Execution, ExecError>;

    /// Timeouts in a row whose runaway thread was abandoned in this process.
    fn consecutive_taints(&self) -> u32 {
        0
    }
}

struct BodyOutcome {
    status: ExecStatus,
    per_statement: Vec<StatementStatus>,
    payloads: Vec<ObservationPayload>,
}

fn resolve(arg: &Arg, values: &[Value]) -> Value {
    match arg {
        Arg::Null => Value::Null,
        Arg::Int(v) => Value::Int(*v),
        Arg::Float(v) => Value::Float(*v),
        Arg::Bytes(b) => Value::Bytes(b.clone()),
        Arg::Var(j) => values[*j].clone(),
    }
}

/// Runs the statements of `tc` in order on the current thread.
fn run_body(
    target: &dyn Target,
    manifest: &TargetManifest,
    tc: &TestCase,
    coverage: &Arc<CoverageMap>,
    mut observers: Vec<Box<dyn RemoteObserver>>,
    fault: Option<SyntheticFault>,
) -> BodyOutcome {
    let mut per_statement = Vec::with_capacity(tc.len());
    let mut status = ExecStatus::Completed;
    let mut session = match target.open_session(coverage.clone()) {
        Ok(s) => Some(s),
        Err(code) => {
            status = ExecStatus::ManagedError { code };
            None
        }
    };
    if let Some(session) = session.as_mut() {
        let mut values: Vec<Value> = Vec::with_capacity(tc.len());
        for stmt in tc.statements() {
            if let Some(f) = fault.filter(|f| f.at_statement == stmt.index) {
                raise_fatal(f.raise_signal);
            }
            coverage.set_progress(stmt.index as u64 + 1);
            let func = manifest
                .function_index(&stmt.callee)
                .expect("test cases are checked against the manifest");
            let args: Vec<Value> = stmt.args.iter().map(|a| resolve(a, &values)).collect();
            for o in observers.iter_mut() {
                o.before_statement(stmt);
            }
            let out = session.call(func, &args);
            let obs = StatementObservation { status: out.status, ret: &out.ret };
            for o in observers.iter_mut() {
                o.after_statement(stmt, &obs);
            }
            if out.status != 0 {
                per_statement.push(StatementStatus::ManagedError { code: out.status });
                status = ExecStatus::ManagedError { code: out.status };
                break;
            }
            per_statement.push(StatementStatus::Ok);
            values.push(out.ret);
        }
        let teardown = session.finish();
        if teardown != 0 && status == ExecStatus::Completed {
            status = ExecStatus::ManagedError { code: teardown };
        }
    }
    // The body stopped before the fault site; fire it now.
    if let Some(f) = fault {
        raise_fatal(f.raise_signal);
    }
    BodyOutcome { status, per_statement, payloads: observers.into_iter().map(|o| o.finish()).collect() }
}

/// Builds a result for an execution that did not finish normally, using
/// what survives in the coverage map.
fn fault_result(tc: &TestCase, status: ExecStatus, coverage: &CoverageMap, wall_time: Duration) -> ExecutionResult {
    let entered = coverage.progress().min(tc.len() as u64) as usize;
    let mut per_statement = vec![StatementStatus::Ok; entered.saturating_sub(1)];
    if entered > 0 {
        per_statement.push(match status {
            ExecStatus::TimedOut => StatementStatus::TimedOut,
            _ => StatementStatus::Crashed,
        });
    }
    ExecutionResult {
        status,
        exit_code: status.exit_code(),
        edge_hits: coverage.snapshot(),
        last_statement: entered.checked_sub(1).and_then(|i| tc.locator(i)),
        per_statement_status: per_statement,
        wall_time,
    }
}

pub struct ThreadedExecutor {
    manifest: Arc<TargetManifest>,
    target: Arc<dyn Target>,
    consecutive_taints: u32,
    total_taints: u32,
}

impl ThreadedExecutor {
    pub fn new(manifest: Arc<TargetManifest>) -> Result<Self, ExecError> {
        let target = load_target(&manifest)?;
        Ok(ThreadedExecutor { manifest, target, consecutive_taints: 0, total_taints: 0 })
    }

    pub fn manifest(&self) -> &TargetManifest {
        &self.manifest
    }

    /// True once any timeout abandoned a thread that may still be running target code.
    pub fn is_tainted(&self) -> bool {
        self.total_taints > 0
    }

    /// Executes on a dedicated thread, recording into `coverage`.
    pub fn run(
        &mut self,
        tc: &TestCase,
        observers: &[RemoteObserverConfig],
        timeout: Duration,
        fault: Option<SyntheticFault>,
        coverage: Arc<CoverageMap>,
    ) -> Result<Execution, ExecError> {
        if let Some(f) = &fault {
            f.check(tc)?;
        }
        let (tx, rx) = mpsc::channel();
        let target = self.target.clone();
        let manifest = self.manifest.clone();
        let body_tc = tc.clone();
        let body_cov = coverage.clone();
        let remote: Vec<Box<dyn RemoteObserver>> = observers.iter().map(|o| o.instantiate()).collect();
        let started = Instant::now();
        let handle = thread::Builder::new()
            .name("test-executor".into())
            .spawn(move || {
                let outcome = run_body(&*target, &manifest, &body_tc, &body_cov, remote, fault);
                let _ = tx.send(outcome);
            })
            .map_err(|e| ExecError::Internal(e.to_string()))?;

        match rx.recv_timeout(timeout) {
            Ok(body) => {
                let wall_time = started.elapsed();
                let _ = handle.join();
                self.consecutive_taints = 0;
                let last_statement = match body.status {
                    ExecStatus::Completed => Some(tc.last_locator()),
                    _ => body.per_statement.len().checked_sub(1).and_then(|i| tc.locator(i)),
                };
                Ok(Execution {
                    result: ExecutionResult {
                        status: body.status,
                        exit_code: body.status.exit_code(),
                        edge_hits: coverage.snapshot(),
                        last_statement,
                        per_statement_status: body.per_statement,
                        wall_time,
                    },
                    payloads: body.payloads,
                    worker_pid: None,
                })
            }
            Err(mpsc::RecvTimeoutError::Timeout) => {
                // The thread cannot be cancelled; leave it running and remember it.
                self.consecutive_taints += 1;
                self.total_taints += 1;
                log::warn!("test {} timed out after {timeout:?}; executor thread abandoned", tc.id());
                Ok(Execution {
                    result: fault_result(tc, ExecStatus::TimedOut, &coverage, started.elapsed()),
                    payloads: Vec::new(),
                    worker_pid: None,
                })
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                let reason = match handle.join() {
                    Err(panic) => panic
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_else(|| "panic".into()),
                    Ok(()) => "executor thread exited without a result".into(),
                };
                Err(ExecError::Internal(reason))
            }
        }
    }
}

impl TestExecutor for ThreadedExecutor {
    fn mode(&self) -> ExecutionMode {
        ExecutionMode::Threaded
    }

    fn execute(
        &mut self,
        tc: &TestCase,
        observers: &[RemoteObserverConfig],
        timeout: Duration,
        fault: Option<SyntheticFault>,
    ) -> Result<Execution, ExecError> {
        let coverage = Arc::new(CoverageMap::in_process(self.manifest.coverage_edges));
        self.run(tc, observers, timeout, fault, coverage)
    }

    fn consecutive_taints(&self) -> u32 {
        self.consecutive_taints
    }
}

/// How to start harness child processes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerLauncher {
    pub program: PathBuf,
    pub inherit_stderr: bool,
}

impl WorkerLauncher {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        WorkerLauncher {
            program: program.into(),
            inherit_stderr: std::env::var_os(WORKER_STDERR_ENV).is_some(),
        }
    }

    /// `$ISOHARNESS_WORKER_PATH` if set, otherwise the running executable.
    pub fn from_env() -> io::Result<Self> {
        match std::env::var_os(WORKER_PATH_ENV) {
            Some(p) => Ok(WorkerLauncher::new(p)),
            None => Ok(WorkerLauncher::new(std::env::current_exe()?)),
        }
    }

    pub(crate) fn command(&self, subcommand: &str) -> Command {
        let mut cmd = Command::new(&self.program);
        cmd.arg(subcommand)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(if self.inherit_stderr { Stdio::inherit() } else { Stdio::null() });
        cmd
    }

    pub(crate) fn spawn(&self, mut cmd: Command) -> Result<Child, ExecError> {
        cmd.spawn().map_err(|source| ExecError::WorkerSpawn { program: self.program.clone(), source })
    }
}

#[derive(Debug, Clone)]
pub struct SubprocessOptions {
    pub address_space_limit: Option<u64>,
    /// Extra time past the test timeout before the supervisor kills the worker.
    pub kill_grace: Duration,
    pub shm_dir: PathBuf,
}

impl Default for SubprocessOptions {
    fn default() -> Self {
        SubprocessOptions {
            address_space_limit: Some(DEFAULT_ADDRESS_SPACE_LIMIT),
            kill_grace: Duration::from_secs(3),
            shm_dir: default_shm_dir(),
        }
    }
}

pub struct SubprocessExecutor {
    launcher: WorkerLauncher,
    manifest: Arc<TargetManifest>,
    handshake: Handshake,
    options: SubprocessOptions,
}

type WorkerReplies = Result<(HandshakeAck, Option<TestReply>), FrameError>;

impl SubprocessExecutor {
    pub fn new(launcher: WorkerLauncher, manifest: Arc<TargetManifest>, options: SubprocessOptions) -> Self {
        let handshake = Handshake {
            schema: PROTOCOL_SCHEMA,
            manifest_hash: manifest.hash(),
            manifest: manifest.to_json(),
            manifest_dir: manifest.source_dir.clone(),
        };
        SubprocessExecutor { launcher, manifest, handshake, options }
    }

    pub fn manifest(&self) -> &TargetManifest {
        &self.manifest
    }

    fn spawn_worker(&self, coverage: &CoverageMap) -> Result<Child, ExecError> {
        let mut cmd = self.launcher.command("worker");
        cmd.arg("--shm").arg(coverage.path().expect("shared coverage map has a path"));
        if let Some(limit) = self.options.address_space_limit {
            cmd.arg("--as-limit").arg(limit.to_string());
        }
        self.launcher.spawn(cmd)
    }
}

fn exit_signal(status: &ExitStatus) -> Option<i32> {
    use std::os::unix::process::ExitStatusExt;
    status.signal()
}

impl TestExecutor for SubprocessExecutor {
    fn mode(&self) -> ExecutionMode {
        ExecutionMode::Subprocess
    }

    fn execute(
        &mut self,
        tc: &TestCase,
        observers: &[RemoteObserverConfig],
        timeout: Duration,
        fault: Option<SyntheticFault>,
    ) -> Result<Execution, ExecError> {
        if let Some(f) = &fault {
            f.check(tc)?;
        }
        let coverage = CoverageMap::create_shared(&self.options.shm_dir, self.manifest.coverage_edges)?;
        let started = Instant::now();
        let mut child = self.spawn_worker(&coverage)?;
        let pid = child.id();

        let request = TestRequest {
            testcase: String::from_utf8(tc.to_bytes()).expect("canonical encoding is UTF-8"),
            observers: RemoteObserverConfig::encode(observers),
            timeout_ms: timeout.as_millis() as u64,
            synthetic_fault: fault,
        };
        let mut stdin = child.stdin.take().expect("stdin is piped");
        // A worker that dies early closes the pipe; its exit status tells the story.
        let _ = ipc::write_frame(&mut stdin, &self.handshake)
            .and_then(|_| ipc::write_frame(&mut stdin, &request));
        drop(stdin);

        let mut stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel::<WorkerReplies>();
        let reader = thread::spawn(move || {
            let replies = (|| {
                let ack: HandshakeAck = ipc::read_frame(&mut stdout)?;
                if ack.error.is_some() {
                    return Ok((ack, None));
                }
                let reply: TestReply = ipc::read_frame(&mut stdout)?;
                Ok((ack, Some(reply)))
            })();
            let _ = tx.send(replies);
        });

        let replies = match rx.recv_timeout(timeout + self.options.kill_grace) {
            Ok(r) => Some(r),
            Err(_) => {
                let _ = child.kill();
                None
            }
        };
        let status = child.wait().map_err(|e| ExecError::Protocol(format!("wait failed: {e}")))?;
        let _ = reader.join();
        let wall_time = started.elapsed();

        let Some(replies) = replies else {
            return Ok(Execution {
                result: fault_result(tc, ExecStatus::TimedOut, &coverage, wall_time),
                payloads: Vec::new(),
                worker_pid: Some(pid),
            });
        };
        match replies {
            Ok((ack, _)) if ack.error.is_some() => Err(ExecError::Worker(ack.error.unwrap())),
            Ok((_, Some(reply))) => {
                let result: ExecutionResult = serde_json::from_str(&reply.result)
                    .map_err(|e| ExecError::Protocol(format!("bad result: {e}")))?;
                let payloads: Vec<ObservationPayload> = serde_json::from_str(&reply.payloads)
                    .map_err(|e| ExecError::Protocol(format!("bad payloads: {e}")))?;
                if result.edge_hits.len() != self.manifest.coverage_edges {
                    return Err(ExecError::Protocol("edge vector length mismatch".into()));
                }
                Ok(Execution { result, payloads, worker_pid: Some(pid) })
            }
            Ok((_, None)) => unreachable!("reply is only absent after an error ack"),
            Err(frame_err) => match exit_signal(&status) {
                Some(signal) => Ok(Execution {
                    result: fault_result(tc, ExecStatus::Crashed { signal }, &coverage, wall_time),
                    payloads: Vec::new(),
                    worker_pid: Some(pid),
                }),
                None => Err(ExecError::Protocol(format!(
                    "worker exited with {status} without a reply ({frame_err})"
                ))),
            },
        }
    }
}
