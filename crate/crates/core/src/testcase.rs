//! Call-sequence test cases.
//!
//! A [`TestCase`] is an ordered list of calls into the target. Arguments are
//! either literals or references to the value returned by an *earlier*
//! statement, identified by index. All randomness flows from explicit seeds.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{FunctionDecl, ParamKind, ParamSpec, TargetManifest};

pub const DEFAULT_MAX_LEN: usize = 20;
pub const TESTCASE_VERSION: u32 = 1;

const MUTATION_ATTEMPTS: usize = 16;
const PRODUCER_DEPTH: usize = 4;

#[derive(Debug, Error)]
pub enum TestCaseError {
    #[error("a test case needs at least one statement")]
    Empty,
    #[error("malformed test case: {0}")]
    Malformed(String),
    #[error("cannot decode test case: {0}")]
    Decode(#[from] serde_json::Error),
    #[error("unsupported test case version {0}")]
    Version(u32),
    #[error("cannot generate a test: {0}")]
    Generation(String),
}

/// An argument: a literal value or a reference to an earlier statement's return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arg {
    Null,
    Int(i64),
    Float(f64),
    Bytes(#[serde(with = "hex_bytes")] Vec<u8>),
    Var(usize),
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        hex::decode(text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statement {
    pub index: usize,
    pub callee: String,
    pub args: Vec<Arg>,
}

/// Identifies the statement that was executing: callee plus position.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StatementLocator {
    pub callee_symbol: String,
    pub statement_index: usize,
}

impl fmt::Display for StatementLocator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.callee_symbol, self.statement_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WireTestCase", into = "WireTestCase")]
pub struct TestCase {
    id: u64,
    seed_provenance: u64,
    statements: Vec<Statement>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireTestCase {
    v: u32,
    id: u64,
    seed: u64,
    statements: Vec<Statement>,
}

impl TryFrom<WireTestCase> for TestCase {
    type Error = TestCaseError;

    fn try_from(w: WireTestCase) -> Result<Self, TestCaseError> {
        if w.v != TESTCASE_VERSION {
            return Err(TestCaseError::Version(w.v));
        }
        TestCase::new(w.id, w.seed, w.statements)
    }
}

impl From<TestCase> for WireTestCase {
    fn from(tc: TestCase) -> Self {
        WireTestCase { v: TESTCASE_VERSION, id: tc.id, seed: tc.seed_provenance, statements: tc.statements }
    }
}

impl TestCase {
    /// Builds a test case, checking the structural invariants that hold
    /// independently of any manifest.
    pub fn new(id: u64, seed_provenance: u64, statements: Vec<Statement>) -> Result<Self, TestCaseError> {
        if statements.is_empty() {
            return Err(TestCaseError::Empty);
        }
        for (i, stmt) in statements.iter().enumerate() {
            if stmt.index != i {
                return Err(TestCaseError::Malformed(format!(
                    "statement at position {i} carries index {}",
                    stmt.index
                )));
            }
            for arg in &stmt.args {
                if let Arg::Var(j) = arg {
                    if *j >= i {
                        return Err(TestCaseError::Malformed(format!(
                            "statement {i} references statement {j}, which is not earlier"
                        )));
                    }
                }
            }
        }
        Ok(TestCase { id, seed_provenance, statements })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn seed_provenance(&self) -> u64 {
        self.seed_provenance
    }

    pub fn statements(&self) -> &[Statement] {
        &self.statements
    }

    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn locator(&self, index: usize) -> Option<StatementLocator> {
        self.statements.get(index).map(|s| StatementLocator {
            callee_symbol: s.callee.clone(),
            statement_index: index,
        })
    }

    pub fn last_locator(&self) -> StatementLocator {
        self.locator(self.len() - 1).expect("test cases are never empty")
    }

    /// Canonical encoding: equal test cases produce identical bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("test case serialization is infallible")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TestCaseError> {
        Ok(serde_json::from_slice(bytes)?)
    }

    /// Checks every invariant that depends on the manifest: callees exist,
    /// arity matches, literals lie in their domains and references point
    /// backwards at producers of the right handle type.
    pub fn check(&self, manifest: &TargetManifest, max_len: usize) -> Result<(), TestCaseError> {
        let bad = |msg: String| Err(TestCaseError::Malformed(msg));
        if self.len() > max_len {
            return bad(format!("length {} exceeds maximum {max_len}", self.len()));
        }
        for stmt in &self.statements {
            let Some(func) = manifest.function(&stmt.callee) else {
                return bad(format!("unknown callee `{}`", stmt.callee));
            };
            if func.params.len() != stmt.args.len() {
                return bad(format!(
                    "`{}` takes {} args, statement {} passes {}",
                    func.symbol,
                    func.params.len(),
                    stmt.index,
                    stmt.args.len()
                ));
            }
            for (p, (param, arg)) in func.params.iter().zip(&stmt.args).enumerate() {
                if let Err(why) = arg_fits(manifest, &self.statements, stmt.index, param, arg) {
                    return bad(format!("statement {} arg {p}: {why}", stmt.index));
                }
            }
        }
        Ok(())
    }
}

fn arg_fits(
    manifest: &TargetManifest,
    statements: &[Statement],
    at: usize,
    param: &ParamSpec,
    arg: &Arg,
) -> Result<(), String> {
    match (&param.kind, arg) {
        (_, Arg::Null) if param.nullable => Ok(()),
        (_, Arg::Null) => Err("null for non-nullable param".into()),
        (ParamKind::Int { min, max }, Arg::Int(v)) if (min..=max).contains(&v) => Ok(()),
        (ParamKind::Float { min, max }, Arg::Float(v)) if *v >= *min && *v <= *max => Ok(()),
        (ParamKind::Bytes { max_len }, Arg::Bytes(b)) if b.len() <= *max_len => Ok(()),
        (ParamKind::Enum { values }, Arg::Int(v)) if values.contains(v) => Ok(()),
        (ParamKind::Handle { type_tag }, Arg::Var(j)) => {
            if *j >= at {
                return Err(format!("reference to {j} is not backward"));
            }
            let produced = manifest
                .function(&statements[*j].callee)
                .and_then(|f| f.returns.handle_tag());
            if produced == Some(type_tag.as_str()) {
                Ok(())
            } else {
                Err(format!("statement {j} does not produce `{type_tag}`"))
            }
        }
        (kind, arg) => Err(format!("{arg:?} does not fit {kind:?}")),
    }
}

/// Stable 64-bit mixer used to derive ids and sub-seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_id(seed: u64, salt: u64) -> u64 {
    splitmix64(seed ^ splitmix64(salt))
}

/// Generates, mutates and recombines test cases for one manifest.
pub struct Generator<'m> {
    manifest: &'m TargetManifest,
    max_len: usize,
    /// Function indices able to produce each handle tag, restricted to reachable ones.
    producers: HashMap<String, Vec<usize>>,
    reachable: Vec<usize>,
}

/// A statement under construction: `origin` is a stable identity used to
/// re-resolve references after statements move.
#[derive(Clone)]
struct Draft {
    origin: usize,
    func: usize,
    args: Vec<DraftArg>,
}

#[derive(Clone)]
enum DraftArg {
    Lit(Arg),
    Ref(usize),
}

impl<'m> Generator<'m> {
    pub fn new(manifest: &'m TargetManifest, max_len: usize) -> Self {
        assert!(max_len >= 1, "max_len must be at least 1");
        let funcs = &manifest.functions;
        let mut reachable_flags = vec![false; funcs.len()];
        let mut produced: Vec<&str> = Vec::new();
        loop {
            let mut changed = false;
            for (i, f) in funcs.iter().enumerate() {
                if reachable_flags[i] {
                    continue;
                }
                let ok = f.params.iter().all(|p| match p.handle_tag() {
                    Some(tag) if !p.nullable => produced.contains(&tag),
                    _ => true,
                });
                if ok {
                    reachable_flags[i] = true;
                    if let Some(tag) = f.returns.handle_tag() {
                        produced.push(tag);
                    }
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let reachable: Vec<usize> = (0..funcs.len()).filter(|&i| reachable_flags[i]).collect();
        let mut producers: HashMap<String, Vec<usize>> = HashMap::new();
        for &i in &reachable {
            if let Some(tag) = funcs[i].returns.handle_tag() {
                producers.entry(tag.to_string()).or_default().push(i);
            }
        }
        Generator { manifest, max_len, producers, reachable }
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    fn func(&self, i: usize) -> &FunctionDecl {
        &self.manifest.functions[i]
    }

    /// A fresh random test of length 1..=max_len.
    pub fn random_test(&self, seed: u64) -> Result<TestCase, TestCaseError> {
        if self.reachable.is_empty() {
            return Err(TestCaseError::Generation(
                "no function has satisfiable parameters".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target_len = rng.gen_range(1..=self.max_len);
        let mut drafts: Vec<Draft> = Vec::new();
        let mut next_origin = 0;
        while drafts.len() < target_len {
            let room = target_len - drafts.len();
            let &wanted = self.reachable.choose(&mut rng).unwrap();
            let mut plan = Vec::new();
            if self.plan_call(wanted, &drafts, room, 0, &mut rng, &mut plan) {
                for func in plan {
                    let draft = self.sample_call(func, &drafts, next_origin, &mut rng);
                    next_origin += 1;
                    drafts.push(draft);
                }
                continue;
            }
            // Producers do not fit; fall back to something callable right now.
            let callable: Vec<usize> = self
                .reachable
                .iter()
                .copied()
                .filter(|&f| self.missing_tags(f, &drafts).is_empty())
                .collect();
            let Some(&func) = callable.choose(&mut rng) else { break };
            let draft = self.sample_call(func, &drafts, next_origin, &mut rng);
            next_origin += 1;
            drafts.push(draft);
        }
        let statements = self.materialize(drafts, &mut rng);
        TestCase::new(derive_id(seed, 1), seed, statements)
    }

    /// Handle tags `func` needs (non-nullable) that no draft produces yet.
    fn missing_tags(&self, func: usize, drafts: &[Draft]) -> Vec<String> {
        let mut missing = Vec::new();
        for p in &self.func(func).params {
            if let Some(tag) = p.handle_tag() {
                if p.nullable {
                    continue;
                }
                let available = drafts
                    .iter()
                    .any(|d| self.func(d.func).returns.handle_tag() == Some(tag));
                if !available && !missing.iter().any(|t: &String| t == tag) {
                    missing.push(tag.to_string());
                }
            }
        }
        missing
    }

    /// Appends to `plan` the calls (producers first) needed to call `func`.
    fn plan_call(
        &self,
        func: usize,
        drafts: &[Draft],
        room: usize,
        depth: usize,
        rng: &mut ChaCha8Rng,
        plan: &mut Vec<usize>,
    ) -> bool {
        if depth > PRODUCER_DEPTH || room == 0 {
            return false;
        }
        let start = plan.len();
        let mut staged: Vec<Draft> = drafts.to_vec();
        for &f in plan.iter() {
            staged.push(Draft { origin: usize::MAX, func: f, args: Vec::new() });
        }
        for tag in self.missing_tags(func, &staged) {
            let Some(candidates) = self.producers.get(&tag) else { return false };
            let &producer = candidates.choose(rng).unwrap();
            let used = plan.len() - start;
            if used + 1 >= room {
                plan.truncate(start);
                return false;
            }
            if !self.plan_call(producer, drafts, room - used - 1, depth + 1, rng, plan) {
                plan.truncate(start);
                return false;
            }
        }
        if plan.len() - start + 1 > room {
            plan.truncate(start);
            return false;
        }
        plan.push(func);
        true
    }

    fn sample_call(&self, func: usize, prior: &[Draft], origin: usize, rng: &mut ChaCha8Rng) -> Draft {
        let args = self
            .func(func)
            .params
            .iter()
            .map(|p| match p.handle_tag() {
                Some(tag) => {
                    let candidates: Vec<usize> = prior
                        .iter()
                        .filter(|d| self.func(d.func).returns.handle_tag() == Some(tag))
                        .map(|d| d.origin)
                        .collect();
                    match candidates.choose(rng) {
                        Some(&o) if !(p.nullable && rng.gen_bool(0.1)) => DraftArg::Ref(o),
                        _ => DraftArg::Lit(Arg::Null),
                    }
                }
                None => DraftArg::Lit(sample_literal(p, rng)),
            })
            .collect();
        Draft { origin, func, args }
    }

    /// Resolves draft references into indices. References whose target is
    /// gone, or no longer produces the required tag, are re-pointed at another
    /// earlier producer, nulled when the parameter allows it, or the
    /// statement is dropped.
    fn materialize(&self, drafts: Vec<Draft>, rng: &mut ChaCha8Rng) -> Vec<Statement> {
        let mut placed: BTreeMap<usize, usize> = BTreeMap::new();
        let mut out: Vec<Statement> = Vec::new();
        'drafts: for draft in drafts {
            let func = self.func(draft.func);
            let index = out.len();
            let mut args = Vec::with_capacity(draft.args.len());
            for (param, arg) in func.params.iter().zip(draft.args) {
                let resolved = match arg {
                    DraftArg::Lit(lit) => lit,
                    DraftArg::Ref(origin) => {
                        let tag = param.handle_tag().expect("references only fill handle params");
                        let produces = |i: usize| {
                            self.manifest
                                .function(&out[i].callee)
                                .and_then(|f| f.returns.handle_tag())
                                == Some(tag)
                        };
                        match placed.get(&origin) {
                            Some(&i) if produces(i) => Arg::Var(i),
                            _ => {
                                let alternatives: Vec<usize> =
                                    (0..out.len()).filter(|&i| produces(i)).collect();
                                match alternatives.choose(rng) {
                                    Some(&i) => Arg::Var(i),
                                    None if param.nullable => Arg::Null,
                                    None => continue 'drafts,
                                }
                            }
                        }
                    }
                };
                args.push(resolved);
            }
            placed.insert(draft.origin, index);
            out.push(Statement { index, callee: func.symbol.clone(), args });
            if out.len() == self.max_len {
                break;
            }
        }
        out
    }

    fn to_drafts(&self, tc: &TestCase, origin_base: usize) -> Vec<Draft> {
        tc.statements
            .iter()
            .map(|s| Draft {
                origin: origin_base + s.index,
                func: self
                    .manifest
                    .function_index(&s.callee)
                    .expect("test case was checked against this manifest"),
                args: s
                    .args
                    .iter()
                    .map(|a| match a {
                        Arg::Var(j) => DraftArg::Ref(origin_base + j),
                        lit => DraftArg::Lit(lit.clone()),
                    })
                    .collect(),
            })
            .collect()
    }

    /// A mutant of `tc`. Returns `tc` unchanged only when no operator can
    /// produce a different test. Mutation never grows a test.
    pub fn mutate(&self, tc: &TestCase, seed: u64) -> TestCase {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..MUTATION_ATTEMPTS {
            let mut drafts = self.to_drafts(tc, 0);
            let next_origin = drafts.len();
            let pos = rng.gen_range(0..drafts.len());
            match rng.gen_range(0..4) {
                // Resample one literal argument.
                0 => {
                    let func = self.func(drafts[pos].func);
                    let slots: Vec<usize> = func
                        .params
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| p.handle_tag().is_none())
                        .map(|(i, _)| i)
                        .collect();
                    let Some(&slot) = slots.choose(&mut rng) else { continue };
                    let lit = sample_literal(&func.params[slot], &mut rng);
                    drafts[pos].args[slot] = DraftArg::Lit(lit);
                }
                // Replace the call with a fresh one callable at this position.
                1 => {
                    let prefix = &drafts[..pos];
                    let callable: Vec<usize> = self
                        .reachable
                        .iter()
                        .copied()
                        .filter(|&f| self.missing_tags(f, prefix).is_empty())
                        .collect();
                    let Some(&func) = callable.choose(&mut rng) else { continue };
                    let mut fresh = self.sample_call(func, prefix, next_origin, &mut rng);
                    // Dependents keep pointing at this slot and get re-checked.
                    fresh.origin = drafts[pos].origin;
                    drafts[pos] = fresh;
                }
                // Re-point one reference (or null it when allowed).
                2 => {
                    let func = self.func(drafts[pos].func);
                    let slots: Vec<usize> = func
                        .params
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| p.handle_tag().is_some())
                        .map(|(i, _)| i)
                        .collect();
                    let Some(&slot) = slots.choose(&mut rng) else { continue };
                    let param = &func.params[slot];
                    let tag = param.handle_tag().unwrap();
                    let mut options: Vec<DraftArg> = drafts[..pos]
                        .iter()
                        .filter(|d| self.func(d.func).returns.handle_tag() == Some(tag))
                        .map(|d| DraftArg::Ref(d.origin))
                        .collect();
                    if param.nullable {
                        options.push(DraftArg::Lit(Arg::Null));
                    }
                    let Some(choice) = options.choose(&mut rng) else { continue };
                    drafts[pos].args[slot] = choice.clone();
                }
                // Delete a statement.
                _ => {
                    if drafts.len() < 2 {
                        continue;
                    }
                    drafts.remove(pos);
                }
            }
            let statements = self.materialize(drafts, &mut rng);
            if statements.is_empty() || statements == tc.statements {
                continue;
            }
            return TestCase::new(derive_id(seed, 2), seed, statements)
                .expect("materialized statements satisfy test case invariants");
        }
        tc.clone()
    }

    /// Single-point crossover: a prefix of `a` followed by a suffix of `b`,
    /// with cut points chosen uniformly. Dangling references are repaired.
    pub fn crossover(&self, a: &TestCase, b: &TestCase, seed: u64) -> TestCase {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cut_a = rng.gen_range(1..=a.len());
        let cut_b = rng.gen_range(0..b.len());
        let mut drafts = self.to_drafts(a, 0);
        drafts.truncate(cut_a);
        let offset = a.len();
        drafts.extend(self.to_drafts(b, offset).into_iter().skip(cut_b));
        let statements = self.materialize(drafts, &mut rng);
        if statements.is_empty() {
            return a.clone();
        }
        TestCase::new(derive_id(seed, 3), seed, statements)
            .expect("materialized statements satisfy test case invariants")
    }
}

fn sample_literal(param: &ParamSpec, rng: &mut ChaCha8Rng) -> Arg {
    if param.nullable && rng.gen_bool(0.05) {
        return Arg::Null;
    }
    match &param.kind {
        ParamKind::Int { min, max } => {
            if rng.gen_bool(0.15) {
                let zero = 0.clamp(*min, *max);
                Arg::Int(*[*min, *max, zero].choose(rng).unwrap())
            } else {
                Arg::Int(rng.gen_range(*min..=*max))
            }
        }
        ParamKind::Float { min, max } => {
            if rng.gen_bool(0.15) || min == max {
                let zero = 0.0f64.clamp(*min, *max);
                Arg::Float(*[*min, *max, zero].choose(rng).unwrap())
            } else {
                Arg::Float(rng.gen_range(*min..=*max))
            }
        }
        ParamKind::Bytes { max_len } => {
            let len = rng.gen_range(0..=*max_len);
            Arg::Bytes((0..len).map(|_| rng.gen()).collect())
        }
        ParamKind::Enum { values } => Arg::Int(*values.choose(rng).unwrap()),
        ParamKind::Handle { .. } => Arg::Null,
    }
}

/// Convenience wrapper using the default maximum length.
pub fn random_test(manifest: &TargetManifest, seed: u64, max_len: usize) -> Result<TestCase, TestCaseError> {
    Generator::new(manifest, max_len).random_test(seed)
}

pub fn mutate(tc: &TestCase, manifest: &TargetManifest, seed: u64) -> TestCase {
    Generator::new(manifest, DEFAULT_MAX_LEN.max(tc.len())).mutate(tc, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::parse_manifest;

    fn manifest(functions: &str) -> TargetManifest {
        parse_manifest(&format!(
            r#"{{"schema": 1, "target_id": "t", "artifact_path": "builtin:x",
                "hazard": "native-unchecked", "functions": {functions}, "coverage_edges": 4}}"#
        ))
        .unwrap()
    }

    fn single_noop() -> TargetManifest {
        manifest(r#"[{"symbol": "noop", "params": [], "returns": {"kind": "void"}, "hazard": "managed"}]"#)
    }

    fn stateful() -> TargetManifest {
        manifest(
            r#"[
            {"symbol": "make", "params": [], "returns": {"kind": "handle", "type_tag": "S"}, "hazard": "native-unchecked"},
            {"symbol": "set", "params": [{"kind": "handle", "type_tag": "S"}, {"kind": "int", "min": 0, "max": 5}], "returns": {"kind": "void"}, "hazard": "native-unchecked"},
            {"symbol": "use", "params": [{"kind": "handle", "type_tag": "S", "nullable": true}, {"kind": "bytes", "max_len": 4}], "returns": {"kind": "int"}, "hazard": "native-unchecked"},
            {"symbol": "pick", "params": [{"kind": "enum", "values": [2, 4, 8]}, {"kind": "float", "min": -1.0, "max": 1.0}], "returns": {"kind": "float"}, "hazard": "native-unchecked"}
        ]"#,
        )
    }

    #[test]
    fn single_zero_arg_function() {
        let m = single_noop();
        let tc = random_test(&m, 7, 1).unwrap();
        assert_eq!(tc.len(), 1);
        assert_eq!(tc.statements()[0].callee, "noop");
        assert!(tc.statements()[0].args.is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let m = stateful();
        let a = random_test(&m, 99, 20).unwrap();
        let b = random_test(&m, 99, 20).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_ne!(a, random_test(&m, 100, 20).unwrap());
    }

    #[test]
    fn unsatisfiable_manifest_fails_generation() {
        // A function that needs its own output type can never be called first.
        let m = manifest(
            r#"[{"symbol": "grow", "params": [{"kind": "handle", "type_tag": "T"}],
                 "returns": {"kind": "handle", "type_tag": "T"}, "hazard": "managed"}]"#,
        );
        assert!(matches!(random_test(&m, 1, 5), Err(TestCaseError::Generation(_))));
    }

    #[test]
    fn producers_are_inserted_for_handles() {
        let m = stateful();
        let g = Generator::new(&m, 20);
        let mut saw_set = false;
        for seed in 0..200 {
            let tc = g.random_test(seed).unwrap();
            tc.check(&m, 20).unwrap();
            saw_set |= tc.statements().iter().any(|s| s.callee == "set");
        }
        assert!(saw_set);
    }

    #[test]
    fn degenerate_mutation_is_identity() {
        let m = single_noop();
        let tc = random_test(&m, 3, 1).unwrap();
        assert_eq!(mutate(&tc, &m, 11), tc);
    }

    #[test]
    fn mutation_is_deterministic_and_changes_something() {
        let m = stateful();
        let g = Generator::new(&m, 20);
        let tc = (0..)
            .map(|s| g.random_test(s).unwrap())
            .find(|t| t.len() == 5)
            .unwrap();
        let a = g.mutate(&tc, 1234);
        let b = g.mutate(&tc, 1234);
        assert_eq!(a, b);
        assert_ne!(a.statements(), tc.statements());
        assert!(a.len() <= tc.len());
    }

    #[test]
    fn crossover_repairs_references() {
        let m = stateful();
        let g = Generator::new(&m, 20);
        for seed in 0..200u64 {
            let a = g.random_test(seed).unwrap();
            let b = g.random_test(seed + 1000).unwrap();
            let child = g.crossover(&a, &b, seed);
            child.check(&m, 20).unwrap();
        }
    }

    #[test]
    fn empty_test_is_rejected() {
        assert!(matches!(TestCase::new(1, 1, vec![]), Err(TestCaseError::Empty)));
        let bytes = br#"{"v":1,"id":1,"seed":1,"statements":[]}"#;
        assert!(matches!(TestCase::from_bytes(bytes), Err(TestCaseError::Decode(_))));
    }

    #[test]
    fn forward_reference_is_rejected() {
        let stmts = vec![Statement { index: 0, callee: "use".into(), args: vec![Arg::Var(0)] }];
        assert!(matches!(TestCase::new(1, 1, stmts), Err(TestCaseError::Malformed(_))));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let m = single_noop();
        let tc = random_test(&m, 3, 1).unwrap();
        let text = String::from_utf8(tc.to_bytes()).unwrap().replace("\"v\":1", "\"v\":9");
        assert!(TestCase::from_bytes(text.as_bytes()).is_err());
        assert!(TestCase::from_bytes(b"not json").is_err());
    }

    #[test]
    fn check_catches_type_errors() {
        let m = stateful();
        let stmts = vec![
            Statement { index: 0, callee: "pick".into(), args: vec![Arg::Int(2), Arg::Float(0.5)] },
            Statement { index: 1, callee: "set".into(), args: vec![Arg::Var(0), Arg::Int(1)] },
        ];
        let tc = TestCase::new(1, 1, stmts).unwrap();
        assert!(tc.check(&m, 20).is_err());

        let stmts = vec![Statement { index: 0, callee: "pick".into(), args: vec![Arg::Int(3), Arg::Float(0.5)] }];
        assert!(TestCase::new(1, 1, stmts).unwrap().check(&m, 20).is_err());
    }
}
