//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::executor::{SubprocessExecutor, SubprocessOptions, WorkerLauncher, DEFAULT_ADDRESS_SPACE_LIMIT, DEFAULT_TEST_TIMEOUT};
use crate::manifest::{load_manifest, TargetManifest};
use crate::modeselect::{run_supervised, RequestedMode, SupervisedOutcome, SupervisorConfig, DEFAULT_GRACE};
use crate::reproducer::{replay, Reproducer};
use crate::search::{FaultPlan, SearchConfig};
use crate::stats::{self, Metric, RunSample, DEFAULT_ALPHA};
use crate::target::builtin;
use crate::testcase::DEFAULT_MAX_LEN;
use crate::triage::{
    candidate_from_reproducer, triage, DedupeKey, ExclusionConfig, TriageConfig, TriageReport,
    DEFAULT_REPLAY_RUNS,
};

#[derive(Debug, Parser)]
#[command(name = "isoharness", version, about = "Crash-isolated test generation for native library APIs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a test suite, export crash reproducers and triage them.
    Gen(GenArgs),
    /// Replay one reproducer in a fresh worker.
    Replay(ReplayArgs),
    /// Confirm and deduplicate a directory of crash reproducers.
    Triage(TriageArgs),
    /// Run repetitions x modes x targets and collect run samples.
    Bench(BenchArgs),
    /// Compare modes in a run-sample CSV.
    Stats(StatsArgs),
    #[command(hide = true)]
    Worker {
        #[arg(long)]
        shm: PathBuf,
        #[arg(long)]
        as_limit: Option<u64>,
    },
    #[command(hide = true)]
    SearchWorker,
}

#[derive(Debug, Clone, Args)]
pub struct TargetArg {
    /// Manifest file, or `builtin:<name>` for a harness-internal target.
    #[arg(long, short = 'm')]
    pub manifest: String,
}

#[derive(Debug, Clone, Args)]
pub struct ReplaySettings {
    /// Replays per crash candidate.
    #[arg(long, default_value_t = DEFAULT_REPLAY_RUNS)]
    pub replay_runs: u32,
    /// Per-replay timeout. `gen` defaults to its per-test timeout, `triage` to 10 s.
    #[arg(long)]
    pub replay_timeout_s: Option<f64>,
    #[arg(long, value_enum, default_value_t = DedupeKey::Callee)]
    pub dedupe_key: DedupeKey,
    /// Callee symbols whose crashes are dropped.
    #[arg(long = "exclude", value_name = "SYMBOL")]
    pub exclude: Vec<String>,
    /// Keep SIGKILL (out-of-memory) crashes.
    #[arg(long)]
    pub keep_oom: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SearchSettings {
    #[arg(long, value_enum, default_value_t = RequestedMode::Fallback)]
    pub mode: RequestedMode,
    #[arg(long, default_value_t = 600.0)]
    pub budget_s: f64,
    #[arg(long, default_value_t = 10.0)]
    pub per_test_timeout_s: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
    /// Target ids treated as safe by the heuristic modes.
    #[arg(long = "whitelist", value_name = "TARGET_ID")]
    pub whitelist: Vec<String>,
    /// Worker address-space cap in MiB (0 disables it).
    #[arg(long, default_value_t = DEFAULT_ADDRESS_SPACE_LIMIT >> 20)]
    pub as_limit_mb: u64,
    #[arg(long, default_value_t = DEFAULT_GRACE.as_secs_f64())]
    pub grace_s: f64,
    /// Self-test: raise this signal in injected executions.
    #[arg(long, value_name = "SIGNAL")]
    pub inject_signal: Option<i32>,
    /// Self-test: fraction of executions that get an injected fault.
    #[arg(long, requires = "inject_signal")]
    pub inject_rate: Option<f64>,
    /// Self-test: inject one fault once this much of the phase has elapsed.
    #[arg(long, requires = "inject_signal", conflicts_with = "inject_rate")]
    pub inject_at_ms: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub target: TargetArg,
    #[command(flatten)]
    pub search: SearchSettings,
    #[command(flatten)]
    pub replay: ReplaySettings,
    #[arg(long, short = 'o')]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub reproducer: PathBuf,
    #[command(flatten)]
    pub target: TargetArg,
    #[arg(long, default_value_t = DEFAULT_TEST_TIMEOUT.as_secs_f64())]
    pub timeout_s: f64,
}

#[derive(Debug, Args)]
pub struct TriageArgs {
    #[command(flatten)]
    pub target: TargetArg,
    /// Directory of crash reproducers.
    #[arg(long)]
    pub candidates: PathBuf,
    #[command(flatten)]
    pub replay: ReplaySettings,
    #[arg(long, short = 'o')]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Manifests to benchmark (repeatable).
    #[arg(long = "manifest", short = 'm', required = true)]
    pub manifests: Vec<String>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [RequestedMode::Threaded, RequestedMode::Subprocess])]
    pub modes: Vec<RequestedMode>,
    #[arg(long, default_value_t = 30)]
    pub reps: u32,
    #[arg(long, default_value_t = 600.0)]
    pub budget_s: f64,
    #[arg(long, default_value_t = 10.0)]
    pub per_test_timeout_s: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_GRACE.as_secs_f64())]
    pub grace_s: f64,
    #[arg(long, short = 'o')]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Run-sample CSV (`module,mode,rep,coverage,crashed`).
    pub samples: PathBuf,
    #[arg(long)]
    pub treatment: Option<String>,
    #[arg(long)]
    pub control: Option<String>,
    #[arg(long, value_enum, default_value_t = Metric::Coverage)]
    pub metric: Metric,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Also write the summaries as JSON here.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

fn seconds(label: &str, s: f64) -> Result<Duration> {
    if !(s.is_finite() && s > 0.0) {
        bail!("{label} must be a positive number of seconds, got {s}");
    }
    Ok(Duration::from_secs_f64(s))
}

pub fn resolve_target(spec: &str) -> Result<TargetManifest> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        return builtin::manifest(name).with_context(|| {
            format!("unknown builtin target `{name}` (known: {})", builtin::BUILTIN_NAMES.join(", "))
        });
    }
    load_manifest(spec).with_context(|| format!("loading manifest {spec}"))
}

fn launcher() -> Result<WorkerLauncher> {
    WorkerLauncher::from_env().context("locating the worker executable")
}

fn triage_config(r: &ReplaySettings, default_timeout: Duration) -> Result<TriageConfig> {
    if r.replay_runs == 0 {
        bail!("--replay-runs must be at least 1");
    }
    Ok(TriageConfig {
        replay_runs: r.replay_runs,
        replay_timeout: match r.replay_timeout_s {
            Some(s) => seconds("--replay-timeout-s", s)?,
            None => default_timeout,
        },
        dedupe_key: r.dedupe_key,
        exclusions: ExclusionConfig { excluded_callees: r.exclude.iter().cloned().collect(), keep_oom: r.keep_oom },
    })
}

fn fault_plan(s: &SearchSettings) -> Option<FaultPlan> {
    let signal = s.inject_signal?;
    Some(match (s.inject_rate, s.inject_at_ms) {
        (_, Some(after_ms)) => FaultPlan::AtElapsed { signal, after_ms },
        (rate, None) => FaultPlan::Probability { signal, rate: rate.unwrap_or(0.1) },
    })
}

fn supervisor_config(s: &SearchSettings) -> Result<SupervisorConfig> {
    let search = SearchConfig {
        budget: seconds("--budget-s", s.budget_s)?,
        per_test_timeout: seconds("--per-test-timeout-s", s.per_test_timeout_s)?,
        seed: s.seed,
        max_len: s.max_len.max(1),
        fault_plan: fault_plan(s),
        ..SearchConfig::default()
    };
    let mut config = SupervisorConfig::new(s.mode, search, launcher()?);
    config.whitelist = s.whitelist.iter().cloned().collect();
    config.address_space_limit = (s.as_limit_mb > 0).then_some(s.as_limit_mb << 20);
    config.grace = seconds("--grace-s", s.grace_s)?;
    Ok(config)
}

fn subprocess_executor(manifest: &TargetManifest) -> Result<SubprocessExecutor> {
    Ok(SubprocessExecutor::new(launcher()?, Arc::new(manifest.clone()), SubprocessOptions::default()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn fresh_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn read_reproducers(dir: &Path) -> Result<Vec<Reproducer>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| Reproducer::read(p).with_context(|| format!("reading {}", p.display()))).collect()
}

fn export_causes(dir: &Path, manifest: &TargetManifest, report: &TriageReport) -> Result<()> {
    fresh_dir(dir)?;
    for (i, cause) in report.causes.iter().enumerate() {
        let repro = Reproducer::expecting(
            manifest,
            cause.representative.clone(),
            cause.key.exit_code,
            cause.representative_locator.clone(),
        );
        repro.write(&dir.join(format!("cause-{i:03}.json")))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RunSummary<'a> {
    target_id: &'a str,
    manifest_hash: String,
    policy: &'a crate::modeselect::ModePolicy,
    phases: &'a [crate::modeselect::PhaseRecord],
    crashed: bool,
    coverage: f64,
    executions: u64,
    suite_size: usize,
    crash_candidates: usize,
    unique_causes: usize,
}

fn cmd_gen(args: GenArgs) -> Result<i32> {
    let manifest = resolve_target(&args.target.manifest)?;
    let config = supervisor_config(&args.search)?;
    let triage_cfg = triage_config(&args.replay, config.search.per_test_timeout)?;
    let out = &args.out;
    fresh_dir(out)?;
    let suite_dir = out.join("suite");
    let candidates_dir = out.join("candidates");
    let crashes_dir = out.join("crashes");
    for d in [&suite_dir, &candidates_dir, &crashes_dir] {
        fresh_dir(d)?;
    }

    let supervised: SupervisedOutcome = run_supervised(&config, &manifest)?;
    let mut report = TriageReport { candidates: 0, reproduced: 0, excluded: 0, causes: Vec::new(), reports: Vec::new() };
    match &supervised.search {
        Some(search) => {
            for t in &search.final_suite {
                Reproducer::expecting(&manifest, t.testcase.clone(), Some(0), t.last_statement.clone())
                    .write(&suite_dir.join(format!("test-{:06}.json", t.testcase.id())))?;
            }
            for c in &search.crash_queue {
                Reproducer::new(&manifest, c.testcase.clone(), &c.result)
                    .write(&candidates_dir.join(format!("crash-{:06}.json", c.testcase.id())))?;
            }
            fs::write(out.join("timeline.csv"), search.timeline_csv())?;
            if !search.crash_queue.is_empty() {
                let mut executor = subprocess_executor(&manifest)?;
                report = triage(&search.crash_queue, &triage_cfg, &mut executor);
            }
        }
        None => {
            eprintln!("search terminated abnormally; recording 0% coverage");
        }
    }
    export_causes(&crashes_dir, &manifest, &report)?;
    write_json(&out.join("triage.json"), &report)?;
    let summary = RunSummary {
        target_id: &manifest.target_id,
        manifest_hash: manifest.hash(),
        policy: &supervised.policy,
        phases: &supervised.phases,
        crashed: supervised.crashed(),
        coverage: supervised.coverage(),
        executions: supervised.search.as_ref().map_or(0, |s| s.executions),
        suite_size: supervised.search.as_ref().map_or(0, |s| s.final_suite.len()),
        crash_candidates: report.candidates,
        unique_causes: report.causes.len(),
    };
    write_json(&out.join("run.json"), &summary)?;

    println!(
        "{}: mode {} -> {}{}, coverage {:.1}%, {} executions, {} suite tests, {} crash candidates, {} unique causes",
        manifest.target_id,
        supervised.policy.requested,
        supervised.policy.resolved_initial,
        if supervised.policy.restarted { " (restarted in subprocess mode)" } else { "" },
        100.0 * summary.coverage,
        summary.executions,
        summary.suite_size,
        summary.crash_candidates,
        summary.unique_causes
    );
    if !report.causes.is_empty() {
        print!("{}", report.table());
    }
    Ok(0)
}

fn cmd_replay(args: ReplayArgs) -> Result<i32> {
    let manifest = resolve_target(&args.target.manifest)?;
    let repro = Reproducer::read(&args.reproducer)?;
    let mut executor = subprocess_executor(&manifest)?;
    let outcome = replay(&repro, &manifest, &mut executor, seconds("--timeout-s", args.timeout_s)?)?;
    let show = |code: Option<i32>| code.map_or("timeout".to_string(), |c| c.to_string());
    let loc = |l: &Option<crate::testcase::StatementLocator>| l.as_ref().map_or("none".to_string(), |l| l.to_string());
    println!(
        "expected exit {} at {}; observed exit {} at {}",
        show(repro.expected_exit_code),
        loc(&repro.expected_locator),
        show(outcome.observed.exit_code),
        loc(&outcome.observed.last_statement)
    );
    println!("{}", outcome.summary());
    Ok(if outcome.reproduced { 0 } else { 1 })
}

fn cmd_triage(args: TriageArgs) -> Result<i32> {
    let manifest = resolve_target(&args.target.manifest)?;
    let config = triage_config(&args.replay, DEFAULT_TEST_TIMEOUT)?;
    let reproducers = read_reproducers(&args.candidates)?;
    for r in &reproducers {
        r.check_target(&manifest)?;
    }
    let candidates: Vec<_> = reproducers.iter().map(candidate_from_reproducer).collect();
    let mut executor = subprocess_executor(&manifest)?;
    let report = triage(&candidates, &config, &mut executor);
    fresh_dir(&args.out)?;
    export_causes(&args.out.join("crashes"), &manifest, &report)?;
    write_json(&args.out.join("triage.json"), &report)?;
    println!(
        "{} candidates, {} reproduced, {} excluded, {} unique causes",
        report.candidates,
        report.reproduced,
        report.excluded,
        report.causes.len()
    );
    print!("{}", report.table());
    Ok(0)
}

/// Seed for one bench cell: the base seed xor a hash of the cell.
pub fn derived_seed(base: u64, module: &str, mode: &str, rep: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(module.as_bytes());
    h.update([0]);
    h.update(mode.as_bytes());
    h.update([0]);
    h.update(rep.to_le_bytes());
    let digest = h.finalize();
    base ^ u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn cmd_bench(args: BenchArgs) -> Result<i32> {
    if args.modes.is_empty() {
        bail!("--modes needs at least one mode");
    }
    let manifests: Vec<TargetManifest> = args.manifests.iter().map(|m| resolve_target(m)).collect::<Result<_>>()?;
    let budget = seconds("--budget-s", args.budget_s)?;
    let per_test = seconds("--per-test-timeout-s", args.per_test_timeout_s)?;
    let grace = seconds("--grace-s", args.grace_s)?;
    fresh_dir(&args.out)?;
    let timelines = args.out.join("timelines");
    fresh_dir(&timelines)?;
    let launcher = launcher()?;

    let mut samples = Vec::new();
    for manifest in &manifests {
        for &mode in &args.modes {
            let mode_name = mode.to_string();
            for rep in 0..args.reps {
                let seed = derived_seed(args.seed, &manifest.target_id, &mode_name, rep);
                let search = SearchConfig { budget, per_test_timeout: per_test, seed, ..SearchConfig::default() };
                let mut config = SupervisorConfig::new(mode, search, launcher.clone());
                config.grace = grace;
                let (coverage, crashed) = match run_supervised(&config, manifest) {
                    Ok(outcome) => {
                        if let Some(s) = &outcome.search {
                            let name = format!("{}__{}__{}.csv", manifest.target_id, mode_name, rep);
                            fs::write(timelines.join(name), s.timeline_csv())?;
                        }
                        (outcome.coverage(), outcome.crashed())
                    }
                    Err(e) => {
                        log::error!("{} {mode_name} rep {rep}: {e}", manifest.target_id);
                        (0.0, true)
                    }
                };
                println!("{} {mode_name} rep {rep}: coverage {:.3}{}", manifest.target_id, coverage, if crashed { " (crashed)" } else { "" });
                samples.push(RunSample { module: manifest.target_id.clone(), mode: mode_name.clone(), rep, coverage, crashed });
            }
        }
    }
    let csv_path = args.out.join("samples.csv");
    stats::write_samples(fs::File::create(&csv_path)?, &samples)?;
    println!("wrote {}", csv_path.display());
    if args.modes.len() >= 2 {
        for summary in summaries(&samples, None, None, Metric::Coverage, DEFAULT_ALPHA)? {
            print!("{}", summary.table());
        }
    }
    Ok(0)
}

fn summaries(
    samples: &[RunSample],
    treatment: Option<&str>,
    control: Option<&str>,
    metric: Metric,
    alpha: f64,
) -> Result<Vec<stats::ModeSummary>> {
    let modes = stats::modes(samples);
    let pairs: Vec<(String, String)> = match (treatment, control) {
        (Some(t), Some(c)) => vec![(t.to_string(), c.to_string())],
        (None, None) => {
            let mut pairs = Vec::new();
            for (i, a) in modes.iter().enumerate() {
                for b in &modes[i + 1..] {
                    pairs.push((a.clone(), b.clone()));
                }
            }
            pairs
        }
        _ => bail!("--treatment and --control go together"),
    };
    if pairs.is_empty() {
        bail!("need at least two modes to compare, found {:?}", modes);
    }
    pairs
        .iter()
        .map(|(t, c)| stats::summarize_modes(samples, t, c, metric, alpha).map_err(Into::into))
        .collect()
}

fn cmd_stats(args: StatsArgs) -> Result<i32> {
    let file = fs::File::open(&args.samples).with_context(|| format!("opening {}", args.samples.display()))?;
    let samples = stats::read_samples(file)?;
    let all = summaries(&samples, args.treatment.as_deref(), args.control.as_deref(), args.metric, args.alpha)?;
    for s in &all {
        print!("{}", s.table());
    }
    let json = serde_json::to_string_pretty(&all)?;
    match &args.json {
        Some(path) => fs::write(path, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(0)
}

/// Runs a parsed command line and returns the process exit status.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Triage(a) => cmd_triage(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Worker { shm, as_limit } => Ok(crate::worker::run_worker(&shm, as_limit)),
        Command::SearchWorker => Ok(crate::modeselect::run_search_worker()),
    }
}
