//! Nonparametric comparison of run populations: Mann-Whitney U, the
//! Vargha-Delaney Â12 effect size, and per-module mode summaries.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

/// Pooled sample sizes up to this use the exact null distribution.
pub const EXACT_LIMIT: usize = 16;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("both samples must be non-empty")]
    DegenerateSample,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("module {module} has no runs for mode {mode}")]
    MissingPair { module: String, mode: String },
    #[error("invalid run sample: {0}")]
    InvalidSample(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub exact: bool,
}

fn check(a: &[f64], b: &[f64]) -> Result<(), StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::DegenerateSample);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

/// Ranks of the pooled values (1-based, ties share their mean rank), in
/// input order, doubled so they stay integral.
fn doubled_midranks(pooled: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && pooled[order[end]] == pooled[order[start]] {
            end += 1;
        }
        // Positions start+1 ..= end share rank (start+1+end)/2.
        let doubled = (start + 1 + end) as u64;
        for &i in &order[start..end] {
            ranks[i] = doubled;
        }
        start = end;
    }
    ranks
}

fn tie_groups(pooled: &[f64]) -> Vec<usize> {
    let mut sorted = pooled.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        groups.push(j - i);
        i = j;
    }
    groups
}

/// Two-sided test of whether `a` and `b` come from the same distribution.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, StatsError> {
    check(a, b)?;
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = doubled_midranks(&pooled);
    let doubled_ra: u64 = ranks[..na].iter().sum();
    let u = doubled_ra as f64 / 2.0 - (na * (na + 1)) as f64 / 2.0;

    if n <= EXACT_LIMIT {
        // counts[k][s]: subsets of size k with doubled rank sum s.
        let max_sum: u64 = ranks.iter().sum();
        let mut counts = vec![vec![0f64; max_sum as usize + 1]; na + 1];
        counts[0][0] = 1.0;
        for &r in &ranks {
            for k in (1..=na).rev() {
                for s in (r as usize..=max_sum as usize).rev() {
                    let below = counts[k - 1][s - r as usize];
                    if below > 0.0 {
                        counts[k][s] += below;
                    }
                }
            }
        }
        let total: f64 = counts[na].iter().sum();
        let observed = doubled_ra as usize;
        let lower: f64 = counts[na][..=observed].iter().sum();
        let upper: f64 = counts[na][observed..].iter().sum();
        let p = (2.0 * lower.min(upper) / total).min(1.0);
        return Ok(MannWhitney { u, p, exact: true });
    }

    let mean = (na * nb) as f64 / 2.0;
    let ties: f64 = tie_groups(&pooled).iter().map(|&t| (t * t * t - t) as f64).sum();
    let nf = n as f64;
    let var = (na * nb) as f64 / 12.0 * ((nf + 1.0) - ties / (nf * (nf - 1.0)));
    if var <= 0.0 {
        return Ok(MannWhitney { u, p: 1.0, exact: false });
    }
    let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p = (2.0 * normal.sf(z)).min(1.0);
    Ok(MannWhitney { u, p, exact: false })
}

/// Probability that a draw from `treatment` exceeds one from `control`,
/// counting ties as one half.
pub fn vargha_delaney_a12(treatment: &[f64], control: &[f64]) -> Result<f64, StatsError> {
    check(treatment, control)?;
    let (nt, nc) = (treatment.len(), control.len());
    let pooled: Vec<f64> = treatment.iter().chain(control).copied().collect();
    let doubled_rt: u64 = doubled_midranks(&pooled)[..nt].iter().sum();
    // 2·(R_t − n_t(n_t+1)/2) is an integer, so this is exact up to one division.
    let doubled_u = doubled_rt - (nt * (nt + 1)) as u64;
    Ok(doubled_u as f64 / (2 * nt * nc) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSample {
    pub module: String,
    pub mode: String,
    pub rep: u32,
    pub coverage: f64,
    pub crashed: bool,
}

impl RunSample {
    pub fn validate(&self) -> Result<(), StatsError> {
        if !(0.0..=1.0).contains(&self.coverage) {
            return Err(StatsError::InvalidSample(format!("coverage {} outside [0,1]", self.coverage)));
        }
        if self.crashed && self.coverage != 0.0 {
            return Err(StatsError::InvalidSample(format!(
                "{}/{}/{} crashed but reports coverage {}",
                self.module, self.mode, self.rep, self.coverage
            )));
        }
        Ok(())
    }
}

pub fn read_samples<R: io::Read>(reader: R) -> Result<Vec<RunSample>, StatsError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let s: RunSample = row?;
        s.validate()?;
        out.push(s);
    }
    Ok(out)
}

pub fn write_samples<W: io::Write>(writer: W, samples: &[RunSample]) -> Result<(), StatsError> {
    let mut w = csv::Writer::from_writer(writer);
    for s in samples {
        w.serialize(s)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Final coverage; higher is better.
    Coverage,
    /// Crashed runs; fewer is better.
    Crashes,
}

impl Metric {
    fn value(self, s: &RunSample) -> f64 {
        match self {
            Metric::Coverage => s.coverage,
            Metric::Crashes => f64::from(u8::from(s.crashed)),
        }
    }

    fn higher_is_better(self) -> bool {
        matches!(self, Metric::Coverage)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Better,
    Equal,
    Worse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleComparison {
    pub module: String,
    pub n_treatment: usize,
    pub n_control: usize,
    pub a12: f64,
    pub u: f64,
    pub p: f64,
    pub verdict: Verdict,
    pub significant: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub better: usize,
    pub better_significant: usize,
    pub equal: usize,
    pub worse: usize,
    pub worse_significant: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub treatment: String,
    pub control: String,
    pub metric: Metric,
    pub alpha: f64,
    pub modules: Vec<ModuleComparison>,
    pub totals: Totals,
    pub mean_a12: f64,
}

/// Compares `treatment` against `control` on every module.
pub fn summarize_modes(
    samples: &[RunSample],
    treatment: &str,
    control: &str,
    metric: Metric,
    alpha: f64,
) -> Result<ModeSummary, StatsError> {
    let mut by_module: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for s in samples {
        let entry = by_module.entry(&s.module).or_default();
        if s.mode == treatment {
            entry.0.push(metric.value(s));
        } else if s.mode == control {
            entry.1.push(metric.value(s));
        }
    }
    if by_module.is_empty() {
        return Err(StatsError::MissingPair { module: "*".into(), mode: treatment.into() });
    }
    let mut modules = Vec::new();
    let mut totals = Totals::default();
    for (module, (t, c)) in by_module {
        for (values, mode) in [(&t, treatment), (&c, control)] {
            if values.is_empty() {
                return Err(StatsError::MissingPair { module: module.into(), mode: mode.into() });
            }
        }
        let a12 = vargha_delaney_a12(&t, &c)?;
        let mw = mann_whitney_u(&t, &c)?;
        let toward_treatment = if metric.higher_is_better() { a12 - 0.5 } else { 0.5 - a12 };
        let verdict = if toward_treatment > 0.0 {
            Verdict::Better
        } else if toward_treatment < 0.0 {
            Verdict::Worse
        } else {
            Verdict::Equal
        };
        let significant = mw.p < alpha;
        match (verdict, significant) {
            (Verdict::Better, true) => totals.better_significant += 1,
            (Verdict::Better, false) => totals.better += 1,
            (Verdict::Worse, true) => totals.worse_significant += 1,
            (Verdict::Worse, false) => totals.worse += 1,
            (Verdict::Equal, _) => totals.equal += 1,
        }
        modules.push(ModuleComparison {
            module: module.into(),
            n_treatment: t.len(),
            n_control: c.len(),
            a12,
            u: mw.u,
            p: mw.p,
            verdict,
            significant,
        });
    }
    let mean_a12 = modules.iter().map(|m| m.a12).sum::<f64>() / modules.len() as f64;
    Ok(ModeSummary { treatment: treatment.into(), control: control.into(), metric, alpha, modules, totals, mean_a12 })
}

/// Distinct modes in the samples, sorted.
pub fn modes(samples: &[RunSample]) -> Vec<String> {
    samples.iter().map(|s| s.mode.clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

impl ModeSummary {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let metric = match self.metric {
            Metric::Coverage => "coverage",
            Metric::Crashes => "crashes",
        };
        let _ = writeln!(out, "{} vs {} on {metric} (alpha {})", self.treatment, self.control, self.alpha);
        let _ = writeln!(out, "{:<28} {:>4} {:>4} {:>7} {:>9} {:>8}", "module", "n_t", "n_c", "A12", "p", "verdict");
        for m in &self.modules {
            let verdict = match (m.verdict, m.significant) {
                (Verdict::Better, true) => "better*",
                (Verdict::Better, false) => "better",
                (Verdict::Equal, _) => "equal",
                (Verdict::Worse, false) => "worse",
                (Verdict::Worse, true) => "worse*",
            };
            let _ = writeln!(
                out,
                "{:<28} {:>4} {:>4} {:>7.3} {:>9.4} {:>8}",
                m.module, m.n_treatment, m.n_control, m.a12, m.p, verdict
            );
        }
        let t = &self.totals;
        let _ = writeln!(
            out,
            "better {} ({} significant), equal {}, worse {} ({} significant); mean A12 {:.3}",
            t.better + t.better_significant,
            t.better_significant,
            t.equal,
            t.worse + t.worse_significant,
            t.worse_significant,
            self.mean_a12
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((r.p - 1.0).abs() < 1e-9);
        assert!(r.exact);
        assert_eq!(vargha_delaney_a12(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.5);
    }

    #[test]
    fn separated_samples() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0, 4.0], &[10.0, 11.0, 12.0, 13.0]).unwrap();
        assert_eq!(r.u, 0.0);
        assert!((r.p - 2.0 / 70.0).abs() < 1e-12);
        assert_eq!(vargha_delaney_a12(&[10.0, 11.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(vargha_delaney_a12(&[1.0, 2.0], &[10.0, 11.0]).unwrap(), 0.0);
    }

    #[test]
    fn a12_with_ties() {
        // Pairs: one win (2 > 1), four ties, four losses.
        let a = vargha_delaney_a12(&[1.0, 1.0, 2.0], &[1.0, 2.0, 2.0]).unwrap();
        assert!((a - 3.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(mann_whitney_u(&[], &[1.0]), Err(StatsError::DegenerateSample)));
        assert!(matches!(vargha_delaney_a12(&[1.0], &[]), Err(StatsError::DegenerateSample)));
        assert!(matches!(mann_whitney_u(&[f64::NAN], &[1.0]), Err(StatsError::NonFinite)));
    }

    #[test]
    fn large_samples_use_normal_approximation() {
        let a: Vec<f64> = (0..30).map(f64::from).collect();
        let b: Vec<f64> = (0..30).map(|i| f64::from(i) + 100.0).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        assert!(!r.exact);
        assert_eq!(r.u, 0.0);
        assert!(r.p < 1e-9);
        let tied = mann_whitney_u(&[0.0; 30], &[0.0; 30]).unwrap();
        assert_eq!(tied.p, 1.0);
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let samples = vec![
            RunSample { module: "m".into(), mode: "threaded".into(), rep: 0, coverage: 0.0, crashed: true },
            RunSample { module: "m".into(), mode: "subprocess".into(), rep: 0, coverage: 0.75, crashed: false },
        ];
        let mut buf = Vec::new();
        write_samples(&mut buf, &samples).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("module,mode,rep,coverage,crashed\n"));
        assert_eq!(read_samples(buf.as_slice()).unwrap(), samples);
        let bad = "module,mode,rep,coverage,crashed\nm,threaded,0,0.5,true\n";
        assert!(matches!(read_samples(bad.as_bytes()), Err(StatsError::InvalidSample(_))));
    }

    #[test]
    fn missing_pair() {
        let samples = vec![
            RunSample { module: "a".into(), mode: "x".into(), rep: 0, coverage: 0.1, crashed: false },
            RunSample { module: "a".into(), mode: "y".into(), rep: 0, coverage: 0.1, crashed: false },
            RunSample { module: "b".into(), mode: "x".into(), rep: 0, coverage: 0.1, crashed: false },
        ];
        assert!(matches!(
            summarize_modes(&samples, "x", "y", Metric::Coverage, 0.05),
            Err(StatsError::MissingPair { .. })
        ));
    }
}
