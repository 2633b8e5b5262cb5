//! Coverage-guided test generation.
//!
//! An archive keeps the shortest test covering each edge goal; a small
//! steady-state GA with random immigrants proposes new tests. The loop is
//! deterministic for a fixed seed and a deterministic target, as long as it
//! is bounded by `max_executions` rather than wall time.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{
    ExecError, ExecStatus, ExecutionMode, ExecutionResult, SyntheticFault, TestExecutor,
    DEFAULT_TEST_TIMEOUT,
};
use crate::manifest::TargetManifest;
use crate::observer::{MainObserver, RemoteObserverConfig};
use crate::testcase::{splitmix64, Generator, StatementLocator, TestCase, TestCaseError, DEFAULT_MAX_LEN};

const FAULT_STREAM: u64 = 0x6661_756c_7473_7472;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("search budget must be positive")]
    ZeroBudget,
    #[error(transparent)]
    Generation(#[from] TestCaseError),
    #[error("execution failed: {0}")]
    Exec(#[from] ExecError),
    #[error("in-process executor wedged by {0} consecutive timeouts")]
    Tainted(u32),
}

/// Synthetic fault injection for self-tests of the isolation machinery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultPlan {
    /// Each execution independently raises `signal` with probability `rate`.
    Probability { signal: i32, rate: f64 },
    /// The first execution starting at or after `after_ms` raises `signal`.
    AtElapsed { signal: i32, after_ms: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub budget: Duration,
    pub per_test_timeout: Duration,
    pub seed: u64,
    pub max_len: usize,
    pub population: usize,
    pub offspring: usize,
    pub immigrant_rate: f64,
    pub crossover_rate: f64,
    /// Stop after this many executions even if budget remains.
    pub max_executions: Option<u64>,
    pub fault_plan: Option<FaultPlan>,
    pub observers: Vec<RemoteObserverConfig>,
    /// Give up once the in-process executor abandoned this many runaway
    /// threads in a row. Only meaningful in threaded mode.
    pub taint_limit: Option<u32>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            budget: Duration::from_secs(600),
            per_test_timeout: DEFAULT_TEST_TIMEOUT,
            seed: 0,
            max_len: DEFAULT_MAX_LEN,
            population: 20,
            offspring: 20,
            immigrant_rate: 0.5,
            crossover_rate: 0.5,
            max_executions: None,
            fault_plan: None,
            observers: Vec::new(),
            taint_limit: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelinePoint {
    pub elapsed_ms: u64,
    pub covered: usize,
    pub total: usize,
}

impl TimelinePoint {
    /// Covered fraction; an empty goal set counts as fully covered.
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.covered as f64 / self.total as f64
        }
    }
}

/// A suite member and where its execution ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteTest {
    pub testcase: TestCase,
    pub last_statement: Option<StatementLocator>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashRecord {
    pub testcase: TestCase,
    pub result: ExecutionResult,
    pub injected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub mode: ExecutionMode,
    pub final_suite: Vec<SuiteTest>,
    pub crash_queue: Vec<CrashRecord>,
    pub timeline: Vec<TimelinePoint>,
    pub executions: u64,
    pub injected_faults: u64,
    pub timeouts: u64,
    pub covered: usize,
    pub total: usize,
    pub elapsed_ms: u64,
}

impl SearchOutcome {
    pub fn coverage(&self) -> f64 {
        TimelinePoint { elapsed_ms: 0, covered: self.covered, total: self.total }.fraction()
    }

    pub fn timeline_csv(&self) -> String {
        let mut out = String::from("elapsed_ms,covered,total\n");
        for p in &self.timeline {
            out.push_str(&format!("{},{},{}\n", p.elapsed_ms, p.covered, p.total));
        }
        out
    }
}

/// Binary per-goal fitness: 0 where the edge was hit, 1 otherwise.
pub fn fitness(result: &ExecutionResult, goals: usize) -> Vec<u8> {
    assert_eq!(result.edge_hits.len(), goals, "edge vector does not match the goal set");
    result.edge_hits.iter().map(|&h| u8::from(h == 0)).collect()
}

/// Goal index to the shortest test known to cover it.
#[derive(Debug, Default, Clone)]
pub struct Archive {
    goals: BTreeMap<usize, TestCase>,
}

impl Archive {
    /// Records `tc` for every goal it covers. A goal's test is replaced
    /// only by a strictly shorter one. Returns the goals newly covered.
    pub fn update(&mut self, tc: &TestCase, covered: impl IntoIterator<Item = usize>) -> usize {
        let mut fresh = 0;
        for goal in covered {
            match self.goals.get(&goal) {
                None => {
                    fresh += 1;
                    self.goals.insert(goal, tc.clone());
                }
                Some(best) if tc.len() < best.len() => {
                    self.goals.insert(goal, tc.clone());
                }
                Some(_) => {}
            }
        }
        fresh
    }

    pub fn covered(&self) -> usize {
        self.goals.len()
    }

    pub fn get(&self, goal: usize) -> Option<&TestCase> {
        self.goals.get(&goal)
    }

    /// Archive tests without duplicates, in id order.
    pub fn tests(&self) -> Vec<TestCase> {
        let mut by_id: BTreeMap<u64, TestCase> = BTreeMap::new();
        for tc in self.goals.values() {
            by_id.entry(tc.id()).or_insert_with(|| tc.clone());
        }
        by_id.into_values().collect()
    }
}

struct Member {
    tc: TestCase,
    new_goals: usize,
    covered: usize,
}

impl Member {
    /// Smaller is better.
    fn rank(&self) -> (std::cmp::Reverse<usize>, std::cmp::Reverse<usize>, usize, u64) {
        (
            std::cmp::Reverse(self.new_goals),
            std::cmp::Reverse(self.covered),
            self.tc.len(),
            self.tc.id(),
        )
    }
}

struct Search<'a, 'o> {
    config: &'a SearchConfig,
    manifest: &'a TargetManifest,
    generator: Generator<'a>,
    executor: &'a mut dyn TestExecutor,
    observers: &'a mut [&'o mut dyn MainObserver],
    rng: ChaCha8Rng,
    fault_rng: ChaCha8Rng,
    started: Instant,
    next_id: u64,
    archive: Archive,
    population: Vec<Member>,
    /// Shortest completed test calling each function, used when there are no edges.
    by_callee: BTreeMap<String, TestCase>,
    last_statements: BTreeMap<u64, Option<StatementLocator>>,
    crash_queue: Vec<CrashRecord>,
    timeline: Vec<TimelinePoint>,
    executions: u64,
    injected: u64,
    timeouts: u64,
    at_elapsed_fired: bool,
}

impl Search<'_, '_> {
    fn exhausted(&self) -> bool {
        self.started.elapsed() >= self.config.budget
            || self.config.max_executions.is_some_and(|m| self.executions >= m)
    }

    fn renumber(&mut self, tc: TestCase) -> TestCase {
        self.next_id += 1;
        TestCase::new(self.next_id, tc.seed_provenance(), tc.statements().to_vec())
            .expect("renumbering keeps statements valid")
    }

    fn planned_fault(&mut self, tc: &TestCase) -> Option<SyntheticFault> {
        let signal = match self.config.fault_plan? {
            FaultPlan::Probability { signal, rate } => {
                if !self.fault_rng.gen_bool(rate.clamp(0.0, 1.0)) {
                    return None;
                }
                signal
            }
            FaultPlan::AtElapsed { signal, after_ms } => {
                if self.at_elapsed_fired || self.started.elapsed() < Duration::from_millis(after_ms) {
                    return None;
                }
                self.at_elapsed_fired = true;
                signal
            }
        };
        let at = self.fault_rng.gen_range(0..tc.len());
        Some(SyntheticFault { raise_signal: signal, at_statement: at })
    }

    fn evaluate(&mut self, tc: TestCase) -> Result<(), SearchError> {
        let tc = self.renumber(tc);
        let fault = self.planned_fault(&tc);
        if fault.is_some() {
            self.injected += 1;
        }
        let execution =
            self.executor
                .execute(&tc, &self.config.observers, self.config.per_test_timeout, fault)?;
        self.executions += 1;
        for o in self.observers.iter_mut() {
            o.on_execution(&tc, &execution);
        }
        let result = execution.result;
        match result.status {
            ExecStatus::Crashed { .. } | ExecStatus::TimedOut => {
                if result.status == ExecStatus::TimedOut {
                    self.timeouts += 1;
                }
                if self.executor.mode() == ExecutionMode::Subprocess {
                    self.crash_queue.push(CrashRecord { testcase: tc, result, injected: fault.is_some() });
                }
                if let Some(limit) = self.config.taint_limit {
                    let taints = self.executor.consecutive_taints();
                    if taints >= limit {
                        return Err(SearchError::Tainted(taints));
                    }
                }
            }
            ExecStatus::Completed | ExecStatus::ManagedError { .. } => {
                let covered: Vec<usize> = result.covered_edges().collect();
                self.last_statements.insert(tc.id(), result.last_statement.clone());
                let new_goals = self.archive.update(&tc, covered.iter().copied());
                for s in tc.statements().iter().take(result.per_statement_status.len()) {
                    match self.by_callee.get(&s.callee) {
                        Some(best) if best.len() <= tc.len() => {}
                        _ => {
                            self.by_callee.insert(s.callee.clone(), tc.clone());
                        }
                    }
                }
                self.admit(Member { tc, new_goals, covered: covered.len() });
            }
        }
        self.timeline.push(TimelinePoint {
            elapsed_ms: self.started.elapsed().as_millis() as u64,
            covered: self.archive.covered(),
            total: self.manifest.coverage_edges,
        });
        Ok(())
    }

    fn admit(&mut self, member: Member) {
        self.population.push(member);
        if self.population.len() > self.config.population.max(1) {
            let worst = (0..self.population.len())
                .max_by_key(|&i| self.population[i].rank())
                .expect("population is non-empty");
            self.population.swap_remove(worst);
        }
    }

    fn tournament(&mut self) -> TestCase {
        let a = self.rng.gen_range(0..self.population.len());
        let b = self.rng.gen_range(0..self.population.len());
        let pick = if self.population[a].rank() <= self.population[b].rank() { a } else { b };
        self.population[pick].tc.clone()
    }

    fn offspring(&mut self) -> Result<TestCase, SearchError> {
        let seed: u64 = self.rng.gen();
        if self.population.is_empty() || self.rng.gen_bool(self.config.immigrant_rate.clamp(0.0, 1.0)) {
            return Ok(self.generator.random_test(seed)?);
        }
        let mut child = self.tournament();
        if self.population.len() > 1 && self.rng.gen_bool(self.config.crossover_rate.clamp(0.0, 1.0)) {
            let other = self.tournament();
            child = self.generator.crossover(&child, &other, splitmix64(seed));
        }
        Ok(self.generator.mutate(&child, seed))
    }

    fn run(mut self) -> Result<SearchOutcome, SearchError> {
        for _ in 0..self.config.population.max(1) {
            if self.exhausted() {
                break;
            }
            let seed: u64 = self.rng.gen();
            let tc = self.generator.random_test(seed)?;
            self.evaluate(tc)?;
        }
        'generations: while !self.exhausted() {
            for _ in 0..self.config.offspring.max(1) {
                if self.exhausted() {
                    break 'generations;
                }
                let child = self.offspring()?;
                self.evaluate(child)?;
            }
        }

        let tests = if self.manifest.coverage_edges == 0 {
            let mut by_id: BTreeMap<u64, TestCase> = BTreeMap::new();
            for tc in self.by_callee.values() {
                by_id.entry(tc.id()).or_insert_with(|| tc.clone());
            }
            by_id.into_values().collect()
        } else {
            self.archive.tests()
        };
        let final_suite = tests
            .into_iter()
            .map(|tc| SuiteTest {
                last_statement: self.last_statements.get(&tc.id()).cloned().flatten(),
                testcase: tc,
            })
            .collect();
        Ok(SearchOutcome {
            mode: self.executor.mode(),
            final_suite,
            crash_queue: self.crash_queue,
            timeline: self.timeline,
            executions: self.executions,
            injected_faults: self.injected,
            timeouts: self.timeouts,
            covered: self.archive.covered(),
            total: self.manifest.coverage_edges,
            elapsed_ms: self.started.elapsed().as_millis() as u64,
        })
    }
}

/// Runs the search loop until the budget (or execution cap) is spent.
pub fn run_search(
    config: &SearchConfig,
    manifest: &TargetManifest,
    executor: &mut dyn TestExecutor,
    observers: &mut [&mut dyn MainObserver],
) -> Result<SearchOutcome, SearchError> {
    if config.budget.is_zero() {
        return Err(SearchError::ZeroBudget);
    }
    let search = Search {
        config,
        manifest,
        generator: Generator::new(manifest, config.max_len.max(1)),
        executor,
        observers,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        fault_rng: ChaCha8Rng::seed_from_u64(config.seed ^ FAULT_STREAM),
        started: Instant::now(),
        next_id: 0,
        archive: Archive::default(),
        population: Vec::new(),
        by_callee: BTreeMap::new(),
        last_statements: BTreeMap::new(),
        crash_queue: Vec::new(),
        timeline: Vec::new(),
        executions: 0,
        injected: 0,
        timeouts: 0,
        at_elapsed_fired: false,
    };
    search.run()
}

/// Convenience wrapper for callers that own the manifest behind an `Arc`.
pub fn run_search_with(
    config: &SearchConfig,
    manifest: &Arc<TargetManifest>,
    executor: &mut dyn TestExecutor,
) -> Result<SearchOutcome, SearchError> {
    run_search(config, manifest, executor, &mut [])
}

/// Goals covered by a set of results, for re-checking archive claims.
pub fn covered_goals<'r>(results: impl IntoIterator<Item = &'r ExecutionResult>) -> BTreeSet<usize> {
    results.into_iter().flat_map(|r| r.covered_edges()).collect()
}
