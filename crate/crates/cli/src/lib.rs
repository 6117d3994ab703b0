//! The commands behind the `blockgraph` binary, usable as a library.

pub mod report;

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use blockgraph_oracle::PropertyVisitor;
use blockgraph_sim::explore::{explore, ExploreConfig, ExploreReport};
use blockgraph_sim::gen::{byzantine_scenario, honest_scenario, Attack};
use blockgraph_sim::{Scenario, Trace};

pub use report::{build as build_report, BankSummary, RunReport, REPORT_SCHEMA};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub struct CliError(pub String);

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CliError {}

fn err(e: impl std::fmt::Display) -> CliError {
    CliError(e.to_string())
}

/// Command-line overrides applied to a scenario before it runs.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub scheme: Option<String>,
    pub shared_power: Option<String>,
    pub mutant: Option<String>,
}

impl Overrides {
    pub fn apply(&self, sc: &mut Scenario) -> Result<(), CliError> {
        if let Some(s) = self.seed {
            sc.seed = s;
        }
        if let Some(s) = &self.scheme {
            sc.scheme = s.clone();
        }
        if let Some(s) = &self.shared_power {
            sc.shared_power = s.clone();
        }
        if self.mutant.is_some() {
            sc.mutant = self.mutant.clone();
        }
        sc.validate().map_err(err)
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError(format!("{}: {e}", path.display())))?;
    Scenario::parse(&text).map_err(|e| CliError(format!("{}: {e}", path.display())))
}

pub fn load_trace(path: &Path) -> Result<Trace, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError(format!("{}: {e}", path.display())))?;
    Trace::from_jsonl(&text).map_err(|e| CliError(format!("{}: {e}", path.display())))
}

fn ms(t: Instant) -> u64 {
    t.elapsed().as_millis() as u64
}

/// Runs a scenario and derives its report from the resulting trace.
pub fn simulate(sc: &Scenario) -> Result<(Trace, RunReport), CliError> {
    let t0 = Instant::now();
    let out = blockgraph_sim::run(sc).map_err(err)?;
    let mut report = build_report(&out.trace, 0).map_err(err)?;
    report.wall_time_ms = ms(t0);
    Ok((out.trace, report))
}

pub fn write_run(dir: &Path, trace: &Trace, report: &RunReport) -> Result<(PathBuf, PathBuf), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError(format!("{}: {e}", dir.display())))?;
    let (tp, rp) = (dir.join("trace.jsonl"), dir.join("report.json"));
    std::fs::write(&tp, trace.to_jsonl()).map_err(|e| CliError(format!("{}: {e}", tp.display())))?;
    std::fs::write(&rp, report.to_json()).map_err(|e| CliError(format!("{}: {e}", rp.display())))?;
    Ok((tp, rp))
}

/// One line per check.
pub fn summary(report: &RunReport) -> String {
    let mut s = String::new();
    for c in &report.checks {
        s.push_str(&format!(
            "{} {} ({} checked)\n",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.checked
        ));
        if let Some(cx) = &c.counterexample {
            s.push_str(&format!("  after {} events: {}\n", cx.prefix, cx.detail));
            for o in &cx.objects {
                s.push_str(&format!("    {o}\n"));
            }
        }
    }
    s
}

pub fn exit_code(report: &RunReport) -> i32 {
    if report.pass {
        EXIT_PASS
    } else {
        EXIT_FAIL
    }
}

/// Re-derives the report of a stored trace.
pub fn check(trace: &Trace) -> Result<RunReport, CliError> {
    let t0 = Instant::now();
    let mut r = build_report(trace, 0).map_err(err)?;
    r.wall_time_ms = ms(t0);
    Ok(r)
}

/// DOT rendering of one bank's graph after the first `at` events.
pub fn export_dot(trace: &Trace, bank: &str, at: Option<usize>) -> Result<String, CliError> {
    let n = trace.events.len();
    let at = at.unwrap_or(n);
    if at > n {
        return Err(CliError(format!("event index {at} is past the end of the trace ({n} events)")));
    }
    let graphs = trace.graphs(at).map_err(err)?;
    let g = graphs.get(bank).ok_or_else(|| CliError(format!("no bank labelled {bank:?}")))?;
    let names: BTreeMap<String, String> =
        trace.header.banks.iter().map(|b| (b.key.clone(), b.name.clone())).collect();
    Ok(g.to_dot(&|id| {
        let k = hex::encode(id.0);
        names.get(&k).cloned().unwrap_or_else(|| k[..8].to_string())
    }))
}

/// Built-in scenario families for sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Honest,
    Byzantine(Attack),
}

impl Family {
    pub const NAMES: [&'static str; 4] = ["honest", "equivocate-start", "equivocate-close", "equivocate-accept"];

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "honest" => Some(Family::Honest),
            "equivocate-start" => Some(Family::Byzantine(Attack::EquivocateStart)),
            "equivocate-close" => Some(Family::Byzantine(Attack::EquivocateClose)),
            "equivocate-accept" => Some(Family::Byzantine(Attack::EquivocateAccept)),
            _ => None,
        }
    }

    pub fn scenario(self, seed: u64) -> Scenario {
        match self {
            Family::Honest => honest_scenario(seed),
            Family::Byzantine(a) => byzantine_scenario(seed, a),
        }
    }
}

#[derive(Debug, Clone)]
pub enum SweepSource {
    /// One scenario, re-run with each seed.
    File(Scenario),
    /// A freshly generated scenario per seed.
    Family(Family),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub checks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub runs: u64,
    pub passed: u64,
    pub failed: Vec<SeedFailure>,
    /// Failing runs per check.
    pub by_check: BTreeMap<String, u64>,
    pub events: u64,
}

/// Runs every seed independently on `workers` threads. Failing traces and
/// reports go to `out/seed-N/` when `out` is given.
pub fn sweep(
    source: &SweepSource,
    seeds: Range<u64>,
    workers: usize,
    overrides: &Overrides,
    out: Option<&Path>,
) -> Result<SweepSummary, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(err)?;
    let one = |seed: u64| -> Result<(u64, RunReport), CliError> {
        let mut sc = match source {
            SweepSource::File(sc) => sc.clone(),
            SweepSource::Family(f) => f.scenario(seed),
        };
        let o = Overrides {
            seed: Some(seed),
            ..overrides.clone()
        };
        o.apply(&mut sc)?;
        let (trace, report) = simulate(&sc)?;
        if !report.pass {
            if let Some(dir) = out {
                write_run(&dir.join(format!("seed-{seed}")), &trace, &report)?;
            }
        }
        Ok((seed, report))
    };
    let results: Vec<(u64, RunReport)> =
        pool.install(|| seeds.into_par_iter().map(one).collect::<Result<Vec<_>, _>>())?;
    let mut s = SweepSummary {
        runs: results.len() as u64,
        passed: 0,
        failed: Vec::new(),
        by_check: BTreeMap::new(),
        events: 0,
    };
    for (seed, r) in &results {
        s.events += r.events;
        if r.pass {
            s.passed += 1;
            continue;
        }
        let names: Vec<String> = r.checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
        for n in &names {
            *s.by_check.entry(n.clone()).or_default() += 1;
        }
        s.failed.push(SeedFailure {
            seed: *seed,
            checks: names,
        });
    }
    Ok(s)
}

pub fn parse_range(s: &str) -> Result<Range<u64>, CliError> {
    let bad = || CliError(format!("bad seed range {s:?}, expected A..B"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(bad());
    }
    Ok(a..b)
}

/// Checks the ledger properties on every delivery schedule of a small
/// honest scenario.
pub fn exhaustive(sc: &Scenario, cfg: ExploreConfig) -> Result<(ExploreReport, PropertyVisitor), CliError> {
    let mut v = PropertyVisitor::new();
    let r = explore(sc, cfg, &mut v).map_err(err)?;
    Ok((r, v))
}
