mod common;

use std::collections::BTreeSet;
use std::ffi::CString;
use std::os::unix::process::ExitStatusExt;
use std::process::Command;
use std::sync::Arc;
use std::time::Duration;

use isoharness::executor::{ExecStatus, TestExecutor, ThreadedExecutor};
use isoharness::manifest::{classify_hazard, HazardClass};
use isoharness::target::native::{RawValue, TAG_BYTES, TAG_INT};
use isoharness::testcase::{random_test, Arg, Statement, TestCase};

const T: Duration = Duration::from_secs(5);

fn single(callee: &str, args: Vec<Arg>) -> TestCase {
    TestCase::new(1, 0, vec![Statement { index: 0, callee: callee.into(), args }]).unwrap()
}

fn sidecar_path() -> (TestCase, BTreeSet<usize>, Vec<(usize, u64)>) {
    let truth = common::sidecar();
    let path = &truth["paths"][0];
    let args = &path["call"]["args"];
    let bytes = args[0].as_array().unwrap().iter().map(|v| v.as_u64().unwrap() as u8).collect();
    let tc = single(path["call"]["symbol"].as_str().unwrap(), vec![Arg::Bytes(bytes), Arg::Int(args[1].as_i64().unwrap())]);
    let edges = path["edges"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap() as usize).collect();
    let hits = path["hits"]
        .as_object()
        .unwrap()
        .iter()
        .map(|(k, v)| (k.parse().unwrap(), v.as_u64().unwrap()))
        .collect();
    (tc, edges, hits)
}

#[test]
fn manifest_describes_a_native_target() {
    let Some(m) = common::corpus_manifest() else { return };
    assert_eq!(classify_hazard(&m, &BTreeSet::new()), HazardClass::Native);
    assert_eq!(m.coverage_edges, 64);
    let builtin = common::builtin_manifest("seeded");
    assert_eq!(m.functions, builtin.functions, "native and builtin seeded targets share signatures");
}

#[test]
fn path_through_validated_sum_hits_exactly_its_edges() {
    let Some(m) = common::corpus_manifest() else { return };
    let (tc, edges, hits) = sidecar_path();
    let mut ex = common::subprocess(&m);
    let a = ex.execute(&tc, &[], T, None).unwrap().result;
    assert_eq!(a.status, ExecStatus::Completed);
    assert_eq!(a.covered_edges().collect::<BTreeSet<_>>(), edges);
    for (edge, count) in hits {
        assert_eq!(a.edge_hits[edge], count, "edge {edge}");
    }
    for &e in &edges {
        assert!(a.edge_hits[e] >= 1);
    }
    let b = ex.execute(&tc, &[], T, None).unwrap().result;
    assert_eq!(a.edge_hits, b.edge_hits);

    // The builtin mirror uses the same edge numbering.
    let mirror = common::builtin_manifest("seeded");
    let mut thr = ThreadedExecutor::new(Arc::new(mirror)).unwrap();
    let c = thr.execute(&tc, &[], T, None).unwrap().result;
    assert_eq!(c.edge_hits[..], a.edge_hits[..c.edge_hits.len()]);
}

#[test]
fn unattached_shim_ignores_hits() {
    let Some(lib) = common::corpus_library() else { return };
    let path = CString::new(lib.to_str().unwrap()).unwrap();
    // SAFETY: test-only direct use of the documented ABI.
    unsafe {
        let h = libc::dlopen(path.as_ptr(), libc::RTLD_NOW | libc::RTLD_LOCAL);
        assert!(!h.is_null());
        let sum = libc::dlsym(h, c"validated_sum".as_ptr());
        let dropped = libc::dlsym(h, c"isoharness_cov_dropped".as_ptr());
        assert!(!sum.is_null() && !dropped.is_null());
        type Entry = unsafe extern "C" fn(*const RawValue, u32, *mut RawValue) -> i32;
        type Dropped = unsafe extern "C" fn() -> u64;
        let sum: Entry = std::mem::transmute::<*mut libc::c_void, Entry>(sum);
        let dropped: Dropped = std::mem::transmute::<*mut libc::c_void, Dropped>(dropped);
        let buf = [1u8, 0, 200];
        let mut args = [RawValue::null(), RawValue::null()];
        args[0].tag = TAG_BYTES;
        args[0].bytes = buf.as_ptr();
        args[0].len = 3;
        args[1].tag = TAG_INT;
        args[1].int = 3;
        let mut ret = RawValue::null();
        assert_eq!(sum(args.as_ptr(), 2, &mut ret), 0);
        assert_eq!(ret.int, 201);
        // Edges 16, 20, 20, 21, 19, 24.
        assert_eq!(dropped(), 6);
        libc::dlclose(h);
    }
}

#[test]
fn random_tests_only_reach_documented_faults() {
    let Some(m) = common::corpus_manifest() else { return };
    let truth = common::sidecar();
    let documented: BTreeSet<(String, Option<i32>)> = truth["faults"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| (f["symbol"].as_str().unwrap().to_string(), f["exit_code"].as_i64().map(|c| c as i32)))
        .collect();
    let mut ex = common::subprocess(&m);
    let mut seen = BTreeSet::new();
    for seed in 0..120 {
        let tc = random_test(&m, seed, 6).unwrap();
        let r = ex.execute(&tc, &[], Duration::from_millis(200), None).unwrap().result;
        if r.status.is_fault() {
            let callee = r.last_statement.expect("faults carry a locator").callee_symbol;
            let pair = (callee, r.exit_code);
            assert!(documented.contains(&pair), "undocumented fault {pair:?}");
            seen.insert(pair);
        }
    }
    assert!(seen.len() >= 3, "random tests found {seen:?}");
}

#[test]
fn every_documented_fault_fires_on_its_trigger() {
    let Some(m) = common::corpus_manifest() else { return };
    let mut ex = common::subprocess(&m);
    let state_fault = TestCase::new(
        1,
        0,
        vec![
            Statement { index: 0, callee: "make_state".into(), args: vec![] },
            Statement { index: 1, callee: "set_mode".into(), args: vec![Arg::Var(0), Arg::Int(3)] },
            Statement { index: 2, callee: "use_state".into(), args: vec![Arg::Var(0), Arg::Int(0)] },
        ],
    )
    .unwrap();
    let triggers = [
        ("crash_segv", single("crash_segv", vec![])),
        ("checked_abort", single("checked_abort", vec![Arg::Int(-3)])),
        ("fpe_div", single("fpe_div", vec![Arg::Int(1), Arg::Int(0)])),
        ("use_state", state_fault),
        ("spin_forever", single("spin_forever", vec![])),
    ];
    for fault in common::sidecar()["faults"].as_array().unwrap() {
        let symbol = fault["symbol"].as_str().unwrap();
        let (_, tc) = triggers.iter().find(|(s, _)| *s == symbol).expect("trigger for every sidecar fault");
        let r = ex.execute(tc, &[], Duration::from_millis(300), None).unwrap().result;
        assert_eq!(r.exit_code, fault["exit_code"].as_i64().map(|c| c as i32), "{symbol}");
        assert_eq!(r.last_statement.unwrap().callee_symbol, symbol);
    }
}

#[test]
fn loading_the_library_does_not_fault() {
    let Some(m) = common::corpus_manifest() else { return };
    isoharness::target::load_target(&m).unwrap();
}

const CHILD_ENV: &str = "ISOHARNESS_TEST_THREADED_CHILD";

/// Runs only inside the child spawned by `threaded_native_crash_kills_the_host`.
#[test]
fn threaded_crash_child() {
    if std::env::var_os(CHILD_ENV).is_none() {
        return;
    }
    let m = common::corpus_manifest().unwrap();
    let mut ex = ThreadedExecutor::new(Arc::new(m)).unwrap();
    let _ = ex.execute(&single("crash_segv", vec![]), &[], T, None);
    std::process::exit(0);
}

#[test]
fn threaded_native_crash_kills_the_host() {
    if common::corpus_library().is_none() {
        return;
    }
    let status = Command::new(std::env::current_exe().unwrap())
        .args(["--exact", "threaded_crash_child", "--test-threads=1"])
        .env(CHILD_ENV, "1")
        .output()
        .unwrap()
        .status;
    assert_eq!(status.signal(), Some(libc::SIGSEGV), "{status:?}");
}
