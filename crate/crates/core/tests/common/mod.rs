#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, OnceLock};

use isoharness::executor::{SubprocessExecutor, SubprocessOptions, WorkerLauncher};
use isoharness::manifest::{load_manifest, ArtifactPath, TargetManifest};
use isoharness::target::builtin;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_isoharness"))
}

pub fn launcher() -> WorkerLauncher {
    WorkerLauncher::new(bin())
}

pub fn subprocess(manifest: &TargetManifest) -> SubprocessExecutor {
    SubprocessExecutor::new(launcher(), Arc::new(manifest.clone()), SubprocessOptions::default())
}

pub fn builtin_manifest(name: &str) -> TargetManifest {
    builtin::manifest(name).unwrap()
}

fn compile_corpus() -> Result<PathBuf, String> {
    let root = repo_root();
    let out_dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("corpus");
    std::fs::create_dir_all(&out_dir).map_err(|e| e.to_string())?;
    let out = out_dir.join("libseeded.so");
    // Several test binaries may compile at once; build privately, then rename.
    let tmp = out_dir.join(format!("libseeded.{}.so", std::process::id()));
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .args(["-O1", "-shared", "-fPIC", "-fvisibility=hidden", "-I"])
        .arg(root.join("crates/core/include"))
        .arg("-o")
        .arg(&tmp)
        .arg(root.join("corpus/seeded/seeded.c"))
        .status()
        .map_err(|e| format!("cannot run {cc}: {e}"))?;
    if !status.success() {
        return Err(format!("{cc} failed: {status}"));
    }
    std::fs::rename(&tmp, &out).map_err(|e| e.to_string())?;
    Ok(out)
}

/// The compiled seeded corpus library, or `None` (with a note) when no C
/// compiler is available.
pub fn corpus_library() -> Option<PathBuf> {
    static LIB: OnceLock<Result<PathBuf, String>> = OnceLock::new();
    match LIB.get_or_init(compile_corpus) {
        Ok(p) => Some(p.clone()),
        Err(e) => {
            eprintln!("skipping: seeded corpus unavailable ({e})");
            None
        }
    }
}

/// `targets/seeded.manifest`, pointed at the freshly compiled library.
pub fn corpus_manifest() -> Option<TargetManifest> {
    let lib = corpus_library()?;
    let mut m = load_manifest(repo_root().join("targets/seeded.manifest")).unwrap();
    m.artifact_path = ArtifactPath::Library(lib);
    Some(m)
}

/// Writes `manifest` to `dir` and returns the file path.
pub fn write_manifest(dir: &Path, manifest: &TargetManifest) -> PathBuf {
    let path = dir.join(format!("{}.manifest", manifest.target_id));
    std::fs::write(&path, manifest.to_json_pretty()).unwrap();
    path
}

pub fn sidecar() -> serde_json::Value {
    let text = std::fs::read_to_string(repo_root().join("targets/seeded.truth.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}
