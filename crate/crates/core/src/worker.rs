//! The per-test worker process (`isoharness worker --shm <path>`).
//!
//! Reads a handshake and one test request, runs the test on a watchdog
//! thread with coverage written into the shared segment, replies, and exits.
//! If the target kills the process, the supervisor reads what it needs from
//! the segment instead.

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::os::fd::FromRawFd;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use crate::executor::{SyntheticFault, ThreadedExecutor};
use crate::ipc::{self, Handshake, HandshakeAck, TestReply, TestRequest, PROTOCOL_SCHEMA};
use crate::manifest::parse_manifest;
use crate::observer::RemoteObserverConfig;
use crate::shm::CoverageMap;
use crate::signals::harden_worker;
use crate::testcase::{TestCase, DEFAULT_MAX_LEN};

/// Exit status when the protocol breaks before a reply could be sent.
pub const WORKER_PROTOCOL_EXIT: i32 = 3;
/// Exit status after an error acknowledgement.
pub const WORKER_REJECT_EXIT: i32 = 4;

/// Moves the protocol channel off fd 1 so stray prints from the target land
/// on stderr instead of corrupting frames.
pub(crate) fn take_protocol_stdout() -> io::Result<File> {
    // SAFETY: dup/dup2 on the standard descriptors; the duplicate is owned by the File.
    unsafe {
        let fd = libc::dup(1);
        if fd < 0 {
            return Err(io::Error::last_os_error());
        }
        if libc::dup2(2, 1) < 0 {
            return Err(io::Error::last_os_error());
        }
        Ok(File::from_raw_fd(fd))
    }
}

struct Prepared {
    executor: ThreadedExecutor,
    coverage: Arc<CoverageMap>,
}

fn prepare(handshake: &Handshake, shm: &Path) -> Result<Prepared, String> {
    if handshake.schema != PROTOCOL_SCHEMA {
        return Err(format!("protocol schema {} unsupported", handshake.schema));
    }
    let mut manifest = parse_manifest(&handshake.manifest).map_err(|e| e.to_string())?;
    manifest.source_dir = handshake.manifest_dir.clone();
    let hash = manifest.hash();
    if hash != handshake.manifest_hash {
        return Err(format!("manifest hash mismatch: worker sees {hash}"));
    }
    let coverage = CoverageMap::open_shared(shm).map_err(|e| e.to_string())?;
    if coverage.edges() != manifest.coverage_edges {
        return Err(format!(
            "segment has {} edges, manifest declares {}",
            coverage.edges(),
            manifest.coverage_edges
        ));
    }
    let executor = ThreadedExecutor::new(Arc::new(manifest)).map_err(|e| e.to_string())?;
    Ok(Prepared { executor, coverage: Arc::new(coverage) })
}

fn decode_request(req: &TestRequest, prepared: &Prepared) -> Result<(TestCase, Vec<RemoteObserverConfig>), String> {
    let tc = TestCase::from_bytes(req.testcase.as_bytes()).map_err(|e| e.to_string())?;
    tc.check(prepared.executor.manifest(), DEFAULT_MAX_LEN.max(tc.len()))
        .map_err(|e| e.to_string())?;
    let observers = RemoteObserverConfig::decode(&req.observers).map_err(|e| e.to_string())?;
    Ok((tc, observers))
}

/// Worker main. Returns the process exit status on paths that do not end in
/// `process::exit` or a signal.
pub fn run_worker(shm: &Path, address_space_limit: Option<u64>) -> i32 {
    harden_worker(address_space_limit);
    let mut out = match take_protocol_stdout() {
        Ok(f) => f,
        Err(e) => {
            eprintln!("worker: {e}");
            return WORKER_PROTOCOL_EXIT;
        }
    };
    let stdin = io::stdin();
    let mut input = BufReader::new(stdin.lock());
    let pid = std::process::id();

    let handshake: Handshake = match ipc::read_frame(&mut input) {
        Ok(h) => h,
        Err(e) => {
            eprintln!("worker: bad handshake: {e}");
            return WORKER_PROTOCOL_EXIT;
        }
    };
    let mut prepared = match prepare(&handshake, shm) {
        Ok(p) => p,
        Err(reason) => {
            let _ = ipc::write_frame(&mut out, &HandshakeAck { schema: PROTOCOL_SCHEMA, pid, error: Some(reason) });
            return WORKER_REJECT_EXIT;
        }
    };
    let request: TestRequest = match ipc::read_frame(&mut input) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("worker: bad request: {e}");
            return WORKER_PROTOCOL_EXIT;
        }
    };
    let decoded = decode_request(&request, &prepared);
    let (tc, observers) = match decoded {
        Ok(d) => d,
        Err(reason) => {
            let _ = ipc::write_frame(&mut out, &HandshakeAck { schema: PROTOCOL_SCHEMA, pid, error: Some(reason) });
            return WORKER_REJECT_EXIT;
        }
    };
    let fault: Option<SyntheticFault> = request.synthetic_fault;
    if let Err(e) = ipc::write_frame(&mut out, &HandshakeAck { schema: PROTOCOL_SCHEMA, pid, error: None }) {
        eprintln!("worker: {e}");
        return WORKER_PROTOCOL_EXIT;
    }

    let timeout = Duration::from_millis(request.timeout_ms.max(1));
    let coverage = prepared.coverage.clone();
    let execution = match prepared.executor.run(&tc, &observers, timeout, fault, coverage) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("worker: {e}");
            return WORKER_PROTOCOL_EXIT;
        }
    };
    let reply = TestReply {
        result: serde_json::to_string(&execution.result).expect("results serialize"),
        payloads: serde_json::to_string(&execution.payloads).expect("payloads serialize"),
    };
    if let Err(e) = ipc::write_frame(&mut out, &reply) {
        eprintln!("worker: {e}");
        return WORKER_PROTOCOL_EXIT;
    }
    let _ = out.flush();
    // A timed-out test leaves its thread running; exiting ends it.
    std::process::exit(0)
}
