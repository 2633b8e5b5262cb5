//! Declarative target descriptions.
//!
//! A manifest names the artifact under test, the entry points the generator
//! may call, their parameter domains, and how hazardous the target is. The
//! on-disk format is strict JSON (`"schema": 1`, unknown keys rejected); see
//! `docs/manifest.md`.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Number;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MANIFEST_SCHEMA: u32 = 1;
pub const MAX_PARAMS: usize = 16;
const BUILTIN_PREFIX: &str = "builtin:";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid manifest: {0}")]
    Validation(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ManifestError> {
    Err(ManifestError::Validation(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hazard {
    #[serde(rename = "managed")]
    Managed,
    #[serde(rename = "native-unchecked")]
    NativeUnchecked,
}

/// Outcome of [`classify_hazard`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HazardClass {
    Pure,
    Native,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ArtifactPath {
    /// Harness-internal stub, written `builtin:<name>`.
    Builtin(String),
    /// Loadable shared library. Relative paths resolve against the manifest's directory.
    Library(PathBuf),
}

impl ArtifactPath {
    fn parse(raw: &str) -> Result<Self, ManifestError> {
        if let Some(name) = raw.strip_prefix(BUILTIN_PREFIX) {
            if name.is_empty() {
                return invalid("builtin artifact needs a name after `builtin:`");
            }
            Ok(ArtifactPath::Builtin(name.to_string()))
        } else if raw.is_empty() {
            invalid("artifact_path is empty")
        } else {
            Ok(ArtifactPath::Library(PathBuf::from(raw)))
        }
    }

    pub fn is_builtin(&self) -> bool {
        matches!(self, ArtifactPath::Builtin(_))
    }
}

impl fmt::Display for ArtifactPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArtifactPath::Builtin(name) => write!(f, "{BUILTIN_PREFIX}{name}"),
            ArtifactPath::Library(path) => write!(f, "{}", path.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamKind {
    Int { min: i64, max: i64 },
    Float { min: f64, max: f64 },
    Bytes { max_len: usize },
    Enum { values: Vec<i64> },
    Handle { type_tag: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub kind: ParamKind,
    pub nullable: bool,
}

impl ParamSpec {
    pub fn new(kind: ParamKind) -> Self {
        Self { kind, nullable: false }
    }

    pub fn nullable(mut self) -> Self {
        self.nullable = true;
        self
    }

    pub fn handle_tag(&self) -> Option<&str> {
        match &self.kind {
            ParamKind::Handle { type_tag } => Some(type_tag),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReturnSpec {
    Void,
    Int,
    Float,
    Handle { type_tag: String },
}

impl ReturnSpec {
    pub fn handle_tag(&self) -> Option<&str> {
        match self {
            ReturnSpec::Handle { type_tag } => Some(type_tag),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionDecl {
    pub symbol: String,
    pub params: Vec<ParamSpec>,
    pub returns: ReturnSpec,
    pub hazard: Hazard,
}

#[derive(Debug, Clone)]
pub struct TargetManifest {
    pub target_id: String,
    pub artifact_path: ArtifactPath,
    pub hazard: Hazard,
    pub whitelisted: bool,
    pub functions: Vec<FunctionDecl>,
    pub coverage_edges: usize,
    pub setup_symbol: Option<String>,
    pub teardown_symbol: Option<String>,
    /// Directory the manifest was loaded from. Not part of the manifest's identity.
    pub source_dir: Option<PathBuf>,
}

impl PartialEq for TargetManifest {
    fn eq(&self, other: &Self) -> bool {
        self.target_id == other.target_id
            && self.artifact_path == other.artifact_path
            && self.hazard == other.hazard
            && self.whitelisted == other.whitelisted
            && self.functions == other.functions
            && self.coverage_edges == other.coverage_edges
            && self.setup_symbol == other.setup_symbol
            && self.teardown_symbol == other.teardown_symbol
    }
}

impl TargetManifest {
    pub fn function(&self, symbol: &str) -> Option<&FunctionDecl> {
        self.functions.iter().find(|f| f.symbol == symbol)
    }

    pub fn function_index(&self, symbol: &str) -> Option<usize> {
        self.functions.iter().position(|f| f.symbol == symbol)
    }

    /// Absolute location of a library artifact, resolved against `source_dir`.
    pub fn library_path(&self) -> Option<PathBuf> {
        match &self.artifact_path {
            ArtifactPath::Builtin(_) => None,
            ArtifactPath::Library(p) if p.is_absolute() => Some(p.clone()),
            ArtifactPath::Library(p) => Some(match &self.source_dir {
                Some(dir) => dir.join(p),
                None => p.clone(),
            }),
        }
    }

    /// Canonical JSON text. Equal manifests serialize to identical bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&RawManifest::from(self)).expect("manifest serialization is infallible")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&RawManifest::from(self))
            .expect("manifest serialization is infallible")
    }

    /// Hex SHA-256 over the canonical manifest text, followed by the library
    /// bytes when the artifact is a readable shared library.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_json().as_bytes());
        if let Some(path) = self.library_path() {
            if let Ok(bytes) = fs::read(&path) {
                hasher.update(b"\0artifact\0");
                hasher.update(&bytes);
            }
        }
        hex::encode(hasher.finalize())
    }

    /// Type tags some function can produce.
    pub fn produced_tags(&self) -> BTreeSet<&str> {
        self.functions.iter().filter_map(|f| f.returns.handle_tag()).collect()
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.target_id.trim().is_empty() {
            return invalid("target_id is empty");
        }
        if self.functions.is_empty() {
            return invalid("manifest declares no functions");
        }
        if self.coverage_edges == 0 && !self.artifact_path.is_builtin() {
            return invalid("coverage_edges must be >= 1 for instrumented library targets");
        }

        let produced = self.produced_tags();
        let mut seen = HashSet::new();
        for func in &self.functions {
            if func.symbol.is_empty() {
                return invalid("function with empty symbol");
            }
            if !seen.insert(func.symbol.as_str()) {
                return invalid(format!("duplicate function symbol `{}`", func.symbol));
            }
            if self.hazard == Hazard::Managed && func.hazard != Hazard::Managed {
                return invalid(format!(
                    "`{}` is native-unchecked but the target is declared managed",
                    func.symbol
                ));
            }
            if func.params.len() > MAX_PARAMS {
                return invalid(format!(
                    "`{}` has {} params (max {MAX_PARAMS})",
                    func.symbol,
                    func.params.len()
                ));
            }
            if let ReturnSpec::Handle { type_tag } = &func.returns {
                if type_tag.is_empty() {
                    return invalid(format!("`{}` returns a handle with empty type_tag", func.symbol));
                }
            }
            for (i, param) in func.params.iter().enumerate() {
                let at = || format!("`{}` param {i}", func.symbol);
                match &param.kind {
                    ParamKind::Int { min, max } if min > max => {
                        return invalid(format!("{}: int min {min} > max {max}", at()))
                    }
                    ParamKind::Float { min, max } => {
                        if !min.is_finite() || !max.is_finite() {
                            return invalid(format!("{}: float bounds must be finite", at()));
                        }
                        if min > max {
                            return invalid(format!("{}: float min {min} > max {max}", at()));
                        }
                    }
                    ParamKind::Enum { values } if values.is_empty() => {
                        return invalid(format!("{}: enum has no values", at()))
                    }
                    ParamKind::Handle { type_tag } if !produced.contains(type_tag.as_str()) => {
                        return invalid(format!(
                            "{}: handle type `{type_tag}` is not returned by any function",
                            at()
                        ))
                    }
                    _ => {}
                }
            }
        }
        for sym in [&self.setup_symbol, &self.teardown_symbol].into_iter().flatten() {
            if sym.is_empty() {
                return invalid("setup/teardown symbol is empty");
            }
        }
        Ok(())
    }
}

/// Parse and validate a manifest file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<TargetManifest, ManifestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut manifest = parse_manifest(&text)?;
    manifest.source_dir = path
        .parent()
        .map(|p| if p.as_os_str().is_empty() { Path::new(".") } else { p })
        .and_then(|p| p.canonicalize().ok());
    Ok(manifest)
}

/// Parse and validate manifest text. `source_dir` is left unset.
pub fn parse_manifest(text: &str) -> Result<TargetManifest, ManifestError> {
    let raw: RawManifest = serde_json::from_str(text)?;
    let manifest = TargetManifest::try_from(raw)?;
    manifest.validate()?;
    Ok(manifest)
}

/// `native` iff the target is native-unchecked and not whitelisted, either by
/// the caller's whitelist or by its own `whitelisted` flag.
pub fn classify_hazard(manifest: &TargetManifest, whitelist: &BTreeSet<String>) -> HazardClass {
    let whitelisted = manifest.whitelisted || whitelist.contains(&manifest.target_id);
    if manifest.hazard == Hazard::NativeUnchecked && !whitelisted {
        HazardClass::Native
    } else {
        HazardClass::Pure
    }
}

// Wire representation. Field names are the file format.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    schema: u32,
    target_id: String,
    artifact_path: String,
    hazard: Hazard,
    #[serde(default)]
    whitelisted: bool,
    functions: Vec<RawFunction>,
    coverage_edges: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    setup_symbol: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    teardown_symbol: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFunction {
    symbol: String,
    params: Vec<RawParam>,
    returns: RawReturn,
    hazard: Hazard,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawParam {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min: Option<Number>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max: Option<Number>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_len: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    type_tag: Option<String>,
    #[serde(default)]
    nullable: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReturn {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    type_tag: Option<String>,
}

impl TryFrom<RawManifest> for TargetManifest {
    type Error = ManifestError;

    fn try_from(raw: RawManifest) -> Result<Self, ManifestError> {
        if raw.schema != MANIFEST_SCHEMA {
            return invalid(format!("unsupported schema {} (expected {MANIFEST_SCHEMA})", raw.schema));
        }
        let functions = raw
            .functions
            .into_iter()
            .map(FunctionDecl::try_from)
            .collect::<Result<Vec<_>, _>>()?;
        let coverage_edges = usize::try_from(raw.coverage_edges)
            .map_err(|_| ManifestError::Validation("coverage_edges out of range".into()))?;
        Ok(TargetManifest {
            target_id: raw.target_id,
            artifact_path: ArtifactPath::parse(&raw.artifact_path)?,
            hazard: raw.hazard,
            whitelisted: raw.whitelisted,
            functions,
            coverage_edges,
            setup_symbol: raw.setup_symbol,
            teardown_symbol: raw.teardown_symbol,
            source_dir: None,
        })
    }
}

impl TryFrom<RawFunction> for FunctionDecl {
    type Error = ManifestError;

    fn try_from(raw: RawFunction) -> Result<Self, ManifestError> {
        let symbol = raw.symbol;
        let params = raw
            .params
            .into_iter()
            .map(|p| ParamSpec::try_from(p).map_err(|e| prefix(&symbol, e)))
            .collect::<Result<Vec<_>, _>>()?;
        let returns = match (raw.returns.kind.as_str(), raw.returns.type_tag) {
            ("void", None) => ReturnSpec::Void,
            ("int", None) => ReturnSpec::Int,
            ("float", None) => ReturnSpec::Float,
            ("handle", Some(type_tag)) => ReturnSpec::Handle { type_tag },
            ("handle", None) => return invalid(format!("`{symbol}`: handle return needs type_tag")),
            (kind, _) => return invalid(format!("`{symbol}`: bad return spec `{kind}`")),
        };
        Ok(FunctionDecl { symbol, params, returns, hazard: raw.hazard })
    }
}

fn prefix(symbol: &str, err: ManifestError) -> ManifestError {
    match err {
        ManifestError::Validation(msg) => ManifestError::Validation(format!("`{symbol}`: {msg}")),
        other => other,
    }
}

impl TryFrom<RawParam> for ParamSpec {
    type Error = ManifestError;

    fn try_from(raw: RawParam) -> Result<Self, ManifestError> {
        let RawParam { kind, min, max, max_len, values, type_tag, nullable } = raw;
        let only = |allowed: &[&str]| -> Result<(), ManifestError> {
            let present = [
                ("min", min.is_some()),
                ("max", max.is_some()),
                ("max_len", max_len.is_some()),
                ("values", values.is_some()),
                ("type_tag", type_tag.is_some()),
            ];
            for (key, set) in present {
                if set && !allowed.contains(&key) {
                    return invalid(format!("`{key}` not allowed for {kind} param"));
                }
                if !set && allowed.contains(&key) {
                    return invalid(format!("{kind} param requires `{key}`"));
                }
            }
            Ok(())
        };
        let kind = match kind.as_str() {
            "int" => {
                only(&["min", "max"])?;
                let as_int = |n: Number| {
                    n.as_i64()
                        .ok_or_else(|| ManifestError::Validation(format!("int bound {n} is not an i64")))
                };
                ParamKind::Int { min: as_int(min.unwrap())?, max: as_int(max.unwrap())? }
            }
            "float" => {
                only(&["min", "max"])?;
                let as_f = |n: Number| {
                    n.as_f64()
                        .ok_or_else(|| ManifestError::Validation(format!("float bound {n} unrepresentable")))
                };
                ParamKind::Float { min: as_f(min.unwrap())?, max: as_f(max.unwrap())? }
            }
            "bytes" => {
                only(&["max_len"])?;
                let max_len = usize::try_from(max_len.unwrap())
                    .map_err(|_| ManifestError::Validation("max_len out of range".into()))?;
                ParamKind::Bytes { max_len }
            }
            "enum" => {
                only(&["values"])?;
                ParamKind::Enum { values: values.unwrap() }
            }
            "handle" => {
                only(&["type_tag"])?;
                ParamKind::Handle { type_tag: type_tag.unwrap() }
            }
            other => return invalid(format!("unknown param kind `{other}`")),
        };
        Ok(ParamSpec { kind, nullable })
    }
}

impl From<&TargetManifest> for RawManifest {
    fn from(m: &TargetManifest) -> Self {
        RawManifest {
            schema: MANIFEST_SCHEMA,
            target_id: m.target_id.clone(),
            artifact_path: m.artifact_path.to_string(),
            hazard: m.hazard,
            whitelisted: m.whitelisted,
            functions: m.functions.iter().map(RawFunction::from).collect(),
            coverage_edges: m.coverage_edges as u64,
            setup_symbol: m.setup_symbol.clone(),
            teardown_symbol: m.teardown_symbol.clone(),
        }
    }
}

impl From<&FunctionDecl> for RawFunction {
    fn from(f: &FunctionDecl) -> Self {
        let returns = match &f.returns {
            ReturnSpec::Void => RawReturn { kind: "void".into(), type_tag: None },
            ReturnSpec::Int => RawReturn { kind: "int".into(), type_tag: None },
            ReturnSpec::Float => RawReturn { kind: "float".into(), type_tag: None },
            ReturnSpec::Handle { type_tag } => {
                RawReturn { kind: "handle".into(), type_tag: Some(type_tag.clone()) }
            }
        };
        RawFunction {
            symbol: f.symbol.clone(),
            params: f.params.iter().map(RawParam::from).collect(),
            returns,
            hazard: f.hazard,
        }
    }
}

impl From<&ParamSpec> for RawParam {
    fn from(p: &ParamSpec) -> Self {
        let mut raw = RawParam { nullable: p.nullable, ..Default::default() };
        match &p.kind {
            ParamKind::Int { min, max } => {
                raw.kind = "int".into();
                raw.min = Some((*min).into());
                raw.max = Some((*max).into());
            }
            ParamKind::Float { min, max } => {
                raw.kind = "float".into();
                raw.min = Number::from_f64(*min);
                raw.max = Number::from_f64(*max);
            }
            ParamKind::Bytes { max_len } => {
                raw.kind = "bytes".into();
                raw.max_len = Some(*max_len as u64);
            }
            ParamKind::Enum { values } => {
                raw.kind = "enum".into();
                raw.values = Some(values.clone());
            }
            ParamKind::Handle { type_tag } => {
                raw.kind = "handle".into();
                raw.type_tag = Some(type_tag.clone());
            }
        }
        raw
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema": 1,
        "target_id": "tiny",
        "artifact_path": "builtin:arith",
        "hazard": "managed",
        "functions": [
            {"symbol": "noop", "params": [], "returns": {"kind": "void"}, "hazard": "managed"}
        ],
        "coverage_edges": 0
    }"#;

    fn with_functions(functions: &str) -> String {
        format!(
            r#"{{"schema": 1, "target_id": "t", "artifact_path": "builtin:x",
                "hazard": "native-unchecked", "functions": {functions}, "coverage_edges": 4}}"#
        )
    }

    #[test]
    fn minimal_manifest_loads() {
        let m = parse_manifest(MINIMAL).unwrap();
        assert_eq!(m.functions.len(), 1);
        assert_eq!(m.hazard, Hazard::Managed);
        assert_eq!(m.artifact_path, ArtifactPath::Builtin("arith".into()));
        assert!(!m.whitelisted);
    }

    #[test]
    fn dangling_handle_is_rejected() {
        let text = with_functions(
            r#"[{"symbol": "det", "params": [{"kind": "handle", "type_tag": "Matrix"}],
                 "returns": {"kind": "float"}, "hazard": "native-unchecked"}]"#,
        );
        let err = parse_manifest(&text).unwrap_err();
        assert!(matches!(err, ManifestError::Validation(ref m) if m.contains("Matrix")), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("\"coverage_edges\": 0", "\"coverage_edges\": 0, \"extra\": true");
        assert!(matches!(parse_manifest(&text), Err(ManifestError::Parse(_))));
        let text = with_functions(
            r#"[{"symbol": "f", "params": [{"kind": "int", "min": 0, "max": 1, "colour": 3}],
                 "returns": {"kind": "void"}, "hazard": "managed"}]"#,
        );
        assert!(matches!(parse_manifest(&text), Err(ManifestError::Parse(_))));
    }

    #[test]
    fn malformed_text_is_a_parse_error() {
        assert!(matches!(parse_manifest("{\"schema\": 1,"), Err(ManifestError::Parse(_))));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(
            load_manifest("/nonexistent/x.manifest"),
            Err(ManifestError::Io { .. })
        ));
    }

    #[test]
    fn invariant_violations() {
        let cases = [
            // min > max
            r#"[{"symbol": "f", "params": [{"kind": "int", "min": 3, "max": 1}], "returns": {"kind": "void"}, "hazard": "managed"}]"#,
            // empty enum
            r#"[{"symbol": "f", "params": [{"kind": "enum", "values": []}], "returns": {"kind": "void"}, "hazard": "managed"}]"#,
            // duplicate symbol
            r#"[{"symbol": "f", "params": [], "returns": {"kind": "void"}, "hazard": "managed"},
                {"symbol": "f", "params": [], "returns": {"kind": "void"}, "hazard": "managed"}]"#,
            // wrong key for kind
            r#"[{"symbol": "f", "params": [{"kind": "bytes", "min": 0, "max_len": 3}], "returns": {"kind": "void"}, "hazard": "managed"}]"#,
            // handle return without tag
            r#"[{"symbol": "f", "params": [], "returns": {"kind": "handle"}, "hazard": "managed"}]"#,
        ];
        for functions in cases {
            let err = parse_manifest(&with_functions(functions)).unwrap_err();
            assert!(matches!(err, ManifestError::Validation(_)), "{functions}: {err}");
        }
    }

    #[test]
    fn too_many_params() {
        let params = vec![r#"{"kind": "int", "min": 0, "max": 1}"#; 17].join(",");
        let text = with_functions(&format!(
            r#"[{{"symbol": "f", "params": [{params}], "returns": {{"kind": "void"}}, "hazard": "managed"}}]"#
        ));
        assert!(matches!(parse_manifest(&text), Err(ManifestError::Validation(_))));
    }

    #[test]
    fn managed_target_with_native_function_is_invalid() {
        let text = MINIMAL.replace(
            r#""returns": {"kind": "void"}, "hazard": "managed"}"#,
            r#""returns": {"kind": "void"}, "hazard": "native-unchecked"}"#,
        );
        assert!(matches!(parse_manifest(&text), Err(ManifestError::Validation(_))));
    }

    #[test]
    fn library_targets_need_coverage() {
        let text = MINIMAL.replace("builtin:arith", "libfoo.so");
        assert!(matches!(parse_manifest(&text), Err(ManifestError::Validation(_))));
        let text = text.replace("\"coverage_edges\": 0", "\"coverage_edges\": 8");
        let m = parse_manifest(&text).unwrap();
        assert_eq!(m.library_path(), Some(PathBuf::from("libfoo.so")));
    }

    #[test]
    fn wrong_schema_is_rejected() {
        let text = MINIMAL.replace("\"schema\": 1", "\"schema\": 2");
        assert!(matches!(parse_manifest(&text), Err(ManifestError::Validation(_))));
    }

    #[test]
    fn classify_hazard_table() {
        let mut m = parse_manifest(MINIMAL).unwrap();
        let empty = BTreeSet::new();
        assert_eq!(classify_hazard(&m, &empty), HazardClass::Pure);

        m.hazard = Hazard::NativeUnchecked;
        assert_eq!(classify_hazard(&m, &empty), HazardClass::Native);

        let listed: BTreeSet<String> = ["tiny".to_string()].into();
        assert_eq!(classify_hazard(&m, &listed), HazardClass::Pure);

        m.whitelisted = true;
        assert_eq!(classify_hazard(&m, &empty), HazardClass::Pure);
    }

    #[test]
    fn hash_ignores_formatting_but_not_content() {
        let a = parse_manifest(MINIMAL).unwrap();
        let b = parse_manifest(&a.to_json_pretty()).unwrap();
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.target_id = "other".into();
        assert_ne!(a.hash(), c.hash());
    }
}
