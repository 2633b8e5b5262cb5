//! Edge counters and the progress marker.
//!
//! Layout of a shared segment (native byte order, see `docs/ipc.md`):
//!
//! ```text
//! [0..8)            magic "ISOHCOV1"
//! [8..12)           edge count E (u32)
//! [12..16)          reserved, zero
//! [16..16+8E)       E edge counters (u64)
//! [16+8E..24+8E)    progress marker (u64)
//! ```
//!
//! The progress marker holds the number of statements entered so far, so a
//! value of `k + 1` means statement `k` was executing (or had just finished)
//! and `0` means no statement started.

use std::fs::{self, OpenOptions};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use memmap2::MmapMut;
use thiserror::Error;

pub const SHM_MAGIC: [u8; 8] = *b"ISOHCOV1";
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum ShmError {
    #[error("shared segment io: {0}")]
    Io(#[from] io::Error),
    #[error("shared segment {0} has a bad header")]
    BadHeader(PathBuf),
    #[error("shared segment {path} is {actual} bytes, expected {expected}")]
    BadSize { path: PathBuf, actual: usize, expected: usize },
}

pub fn segment_len(edges: usize) -> usize {
    HEADER_LEN + 8 * edges + 8
}

enum Backing {
    Heap(Box<[AtomicU64]>),
    Mapped { map: MmapMut, owned_path: Option<PathBuf> },
}

/// Edge-hit counters plus the progress marker, either private to this
/// process or backed by a file mapping that survives the writer's death.
pub struct CoverageMap {
    backing: Backing,
    edges: usize,
    path: Option<PathBuf>,
}

impl CoverageMap {
    pub fn in_process(edges: usize) -> Self {
        let cells: Box<[AtomicU64]> = (0..edges + 1).map(|_| AtomicU64::new(0)).collect();
        CoverageMap { backing: Backing::Heap(cells), edges, path: None }
    }

    /// Creates a zeroed segment in `dir`. The file is removed when the map is dropped.
    pub fn create_shared(dir: &Path, edges: usize) -> Result<Self, ShmError> {
        let path = dir.join(unique_name());
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create_new(true)
            .open(&path)?;
        file.set_len(segment_len(edges) as u64)?;
        // SAFETY: the file was just created by us with create_new and is only
        // shared with the worker we are about to spawn.
        let mut map = unsafe { MmapMut::map_mut(&file)? };
        map[..8].copy_from_slice(&SHM_MAGIC);
        map[8..12].copy_from_slice(&(edges as u32).to_ne_bytes());
        Ok(CoverageMap {
            backing: Backing::Mapped { map, owned_path: Some(path.clone()) },
            edges,
            path: Some(path),
        })
    }

    /// Maps an existing segment created by a supervisor.
    pub fn open_shared(path: &Path) -> Result<Self, ShmError> {
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        // SAFETY: the supervisor owns the file and only reads it after we exit.
        let map = unsafe { MmapMut::map_mut(&file)? };
        if map.len() < HEADER_LEN || map[..8] != SHM_MAGIC {
            return Err(ShmError::BadHeader(path.to_path_buf()));
        }
        let edges = u32::from_ne_bytes(map[8..12].try_into().unwrap()) as usize;
        if map.len() != segment_len(edges) {
            return Err(ShmError::BadSize {
                path: path.to_path_buf(),
                actual: map.len(),
                expected: segment_len(edges),
            });
        }
        Ok(CoverageMap {
            backing: Backing::Mapped { map, owned_path: None },
            edges,
            path: Some(path.to_path_buf()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn edges(&self) -> usize {
        self.edges
    }

    fn cells(&self) -> &[AtomicU64] {
        match &self.backing {
            Backing::Heap(cells) => cells,
            Backing::Mapped { map, .. } => {
                // SAFETY: the mapping is page aligned, so offset 16 is 8-byte
                // aligned; its length was checked to hold E + 1 u64 cells, and
                // AtomicU64 has the layout of u64.
                unsafe {
                    std::slice::from_raw_parts(
                        map.as_ptr().add(HEADER_LEN) as *const AtomicU64,
                        self.edges + 1,
                    )
                }
            }
        }
    }

    pub fn counters(&self) -> &[AtomicU64] {
        &self.cells()[..self.edges]
    }

    pub fn marker(&self) -> &AtomicU64 {
        &self.cells()[self.edges]
    }

    /// Raw counter array for instrumentation runtimes.
    pub fn counters_ptr(&self) -> *mut u64 {
        self.cells().as_ptr() as *mut u64
    }

    /// Out-of-range edges are ignored.
    pub fn hit(&self, edge: usize) {
        if let Some(c) = self.counters().get(edge) {
            c.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn snapshot(&self) -> Vec<u64> {
        self.counters().iter().map(|c| c.load(Ordering::Acquire)).collect()
    }

    pub fn progress(&self) -> u64 {
        self.marker().load(Ordering::Acquire)
    }

    pub fn set_progress(&self, entered: u64) {
        self.marker().store(entered, Ordering::Release);
    }

    pub fn reset(&self) {
        for c in self.cells() {
            c.store(0, Ordering::Relaxed);
        }
    }
}

impl Drop for CoverageMap {
    fn drop(&mut self) {
        if let Backing::Mapped { owned_path: Some(path), .. } = &self.backing {
            let _ = fs::remove_file(path);
        }
    }
}

impl std::fmt::Debug for CoverageMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoverageMap")
            .field("edges", &self.edges)
            .field("path", &self.path)
            .finish()
    }
}

/// `/dev/shm` when usable, the temp dir otherwise.
pub fn default_shm_dir() -> PathBuf {
    let dev_shm = Path::new("/dev/shm");
    if dev_shm.is_dir() {
        let probe = dev_shm.join(format!(".isoharness-probe-{}", std::process::id()));
        if fs::write(&probe, b"").is_ok() {
            let _ = fs::remove_file(&probe);
            return dev_shm.to_path_buf();
        }
    }
    std::env::temp_dir()
}

fn unique_name() -> String {
    use std::sync::atomic::AtomicUsize;
    static NEXT: AtomicUsize = AtomicUsize::new(0);
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.subsec_nanos())
        .unwrap_or(0);
    format!(
        "isoharness-{}-{}-{nanos:08x}",
        std::process::id(),
        NEXT.fetch_add(1, Ordering::Relaxed)
    )
}
