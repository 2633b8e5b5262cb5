//! Length-prefixed frames over a worker's standard streams.
//!
//! A frame is a 4-byte big-endian payload length followed by the payload, a
//! UTF-8 JSON object. Message shapes are documented in `docs/ipc.md`.

use std::io::{self, Read, Write};
use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::SyntheticFault;

pub const PROTOCOL_SCHEMA: u32 = 1;
pub const MAX_FRAME: usize = 64 << 20;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("peer closed the stream")]
    Eof,
    #[error("frame of {0} bytes exceeds limit")]
    TooLarge(usize),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad frame payload: {0}")]
    Payload(#[from] serde_json::Error),
}

pub fn write_frame<W: Write, T: Serialize>(w: &mut W, msg: &T) -> Result<(), FrameError> {
    let payload = serde_json::to_vec(msg)?;
    if payload.len() > MAX_FRAME {
        return Err(FrameError::TooLarge(payload.len()));
    }
    w.write_all(&(payload.len() as u32).to_be_bytes())?;
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

pub fn read_frame<R: Read, T: DeserializeOwned>(r: &mut R) -> Result<T, FrameError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Err(FrameError::Eof),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(FrameError::TooLarge(len));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FrameError::Eof,
        _ => FrameError::Io(e),
    })?;
    Ok(serde_json::from_slice(&payload)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Handshake {
    pub schema: u32,
    pub manifest_hash: String,
    /// Canonical manifest text.
    pub manifest: String,
    /// Directory relative library paths resolve against.
    pub manifest_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HandshakeAck {
    pub schema: u32,
    pub pid: u32,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestRequest {
    /// Canonical test case encoding.
    pub testcase: String,
    /// Encoded remote observer configurations.
    pub observers: String,
    pub timeout_ms: u64,
    pub synthetic_fault: Option<SyntheticFault>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestReply {
    /// Encoded `ExecutionResult`.
    pub result: String,
    /// Encoded list of observation payloads.
    pub payloads: String,
}
