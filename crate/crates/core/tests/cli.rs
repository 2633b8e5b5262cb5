mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use isoharness::reproducer::Reproducer;
use isoharness::stats::read_samples;

fn run(args: &[&str]) -> Output {
    Command::new(common::bin()).args(args).output().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn files(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut v: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn gen_seeded(out: &Path) -> Output {
    run(&[
        "gen",
        "-m",
        "builtin:seeded",
        "--mode",
        "subprocess",
        "--budget-s",
        "3",
        "--per-test-timeout-s",
        "0.3",
        "--seed",
        "3",
        "--replay-runs",
        "2",
        "-o",
        out.to_str().unwrap(),
    ])
}

#[test]
fn gen_replay_and_triage_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gen");
    let o = gen_seeded(&out);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("builtin-seeded: mode subprocess -> subprocess"), "{}", text(&o));

    let summary = json(&out.join("run.json"));
    assert_eq!(summary["crashed"], false);
    assert!(summary["executions"].as_u64().unwrap() > 0);
    assert!(!files(&out.join("suite")).is_empty());
    assert!(fs::read_to_string(out.join("timeline.csv")).unwrap().starts_with("elapsed_ms,"));

    let causes = files(&out.join("crashes"));
    assert!(!causes.is_empty(), "a 3 s search on builtin:seeded finds a crash");
    assert_eq!(summary["unique_causes"].as_u64().unwrap() as usize, causes.len());

    // Every exported cause replays.
    for cause in &causes {
        let o = run(&["replay", cause.to_str().unwrap(), "-m", "builtin:seeded", "--timeout-s", "0.3"]);
        assert_eq!(o.status.code(), Some(0), "{}", text(&o));
        assert!(text(&o).contains("reproduced: "), "{}", text(&o));
    }

    // A wrong expectation is reported as not reproduced.
    let mut repro = Reproducer::read(&causes[0]).unwrap();
    repro.expected_exit_code = Some(0);
    repro.expected_locator = None;
    let edited = dir.path().join("edited.json");
    repro.write(&edited).unwrap();
    let o = run(&["replay", edited.to_str().unwrap(), "-m", "builtin:seeded", "--timeout-s", "0.3"]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
    assert!(text(&o).contains("not reproduced"));

    // Against another target the hash check fails before anything runs.
    let o = run(&["replay", causes[0].to_str().unwrap(), "-m", "builtin:arith"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(text(&o).contains("hashes to"), "{}", text(&o));

    // Standalone triage of the raw candidates agrees with gen.
    let tri = dir.path().join("tri");
    let o = run(&[
        "triage",
        "-m",
        "builtin:seeded",
        "--candidates",
        out.join("candidates").to_str().unwrap(),
        "--replay-runs",
        "2",
        "--replay-timeout-s",
        "0.3",
        "-o",
        tri.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let keys = |p: &Path| -> Vec<serde_json::Value> {
        json(&p.join("triage.json"))["causes"].as_array().unwrap().iter().map(|c| c["key"].clone()).collect()
    };
    assert_eq!(keys(&out), keys(&tri));
    assert_eq!(files(&tri.join("crashes")).len(), causes.len());
}

#[test]
fn gen_on_native_corpus() {
    let Some(m) = common::corpus_manifest() else { return };
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::write_manifest(dir.path(), &m);
    let out = dir.path().join("out");
    let o = run(&[
        "gen",
        "-m",
        manifest.to_str().unwrap(),
        "--mode",
        "heuristic",
        "--budget-s",
        "3",
        "--per-test-timeout-s",
        "0.3",
        "--replay-runs",
        "1",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("mode heuristic -> subprocess"), "{}", text(&o));
    assert!(json(&out.join("run.json"))["coverage"].as_f64().unwrap() > 0.0);
}

#[test]
fn fallback_restart_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "gen",
        "-m",
        "builtin:arith",
        "--mode",
        "fallback",
        "--budget-s",
        "3",
        "--inject-signal",
        "11",
        "--inject-at-ms",
        "500",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("(restarted in subprocess mode)"), "{}", text(&o));
    let summary = json(&out.join("run.json"));
    assert_eq!(summary["policy"]["restarted"], true);
    assert_eq!(summary["phases"].as_array().unwrap().len(), 2);
    assert_eq!(summary["phases"][1]["mode"], "subprocess");
}

#[test]
fn bench_then_stats() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let o = run(&[
        "bench",
        "-m",
        "builtin:arith",
        "-m",
        "builtin:branchy",
        "--modes",
        "threaded,subprocess",
        "--reps",
        "3",
        "--budget-s",
        "0.4",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let samples = read_samples(fs::File::open(out.join("samples.csv")).unwrap()).unwrap();
    assert_eq!(samples.len(), 12);
    assert_eq!(files(&out.join("timelines")).len(), 12);
    assert!(samples.iter().all(|s| !s.crashed));

    let report = dir.path().join("stats.json");
    let o = run(&[
        "stats",
        out.join("samples.csv").to_str().unwrap(),
        "--treatment",
        "subprocess",
        "--control",
        "threaded",
        "--json",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("builtin-branchy"), "{}", text(&o));
    assert!(json(&report).is_array() || json(&report).is_object());

    let o = run(&["stats", out.join("samples.csv").to_str().unwrap(), "--treatment", "heuristic"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
}

#[test]
fn bad_arguments_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = run(&["gen", "-m", "builtin:nope", "--budget-s", "1", "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    let o = run(&["gen", "-m", "builtin:arith", "--budget-s", "0", "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    let o = run(&["gen", "-m", "builtin:arith", "--inject-signal", "9", "--inject-rate", "0.5", "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
}
