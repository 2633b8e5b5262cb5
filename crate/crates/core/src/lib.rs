//! Crash-isolated test generation for native library APIs.
//!
//! Tests are call sequences generated from a [`manifest::TargetManifest`]
//! and executed either on a thread inside the harness or in a disposable
//! worker process. Worker deaths become crash candidates that
//! [`triage`] confirms, deduplicates and classifies.

pub mod cli;
pub mod executor;
pub mod ipc;
pub mod manifest;
pub mod modeselect;
pub mod observer;
pub mod reproducer;
pub mod search;
pub mod shm;
pub mod signals;
pub mod stats;
pub mod target;
pub mod testcase;
pub mod triage;
pub mod worker;
