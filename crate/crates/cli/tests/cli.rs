use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use blockgraph_cli::{sweep, Family, Overrides, RunReport, SweepSource, EXIT_FAIL, EXIT_PASS, EXIT_USAGE};
use blockgraph_sim::{TRACE_SCHEMA, SCENARIO_SCHEMA};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.scn"))
}

fn cli(args: &[&std::ffi::OsStr]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockgraph")).args(args).output().expect("binary runs")
}

fn run_into(name: &str, out: &Path) -> Output {
    cli(&["run".as_ref(), scenario(name).as_os_str(), "--out".as_ref(), out.as_os_str()])
}

fn report(dir: &Path) -> RunReport {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run_into("two_banks", &tmp.path().join("a")).status.code(), Some(EXIT_PASS));
    assert_eq!(run_into("overpower_attack", &tmp.path().join("b")).status.code(), Some(EXIT_FAIL));
    let missing = cli(&["run".as_ref(), tmp.path().join("nope.scn").as_os_str()]);
    assert_eq!(missing.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.scn"));
    assert_eq!(cli(&["frobnicate".as_ref()]).status.code(), Some(EXIT_USAGE));
}

#[test]
fn check_reproduces_the_run_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_into("resubmit_after_crash", tmp.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().all(|l| !l.starts_with("FAIL")), "{stdout}");
    let written = tmp.path().join("again.json");
    let c = cli(&[
        "check".as_ref(),
        tmp.path().join("trace.jsonl").as_os_str(),
        "--report".as_ref(),
        written.as_os_str(),
    ]);
    assert!(c.status.success());
    let printed: RunReport = serde_json::from_slice(&c.stdout).unwrap();
    let saved: RunReport = serde_json::from_str(&std::fs::read_to_string(&written).unwrap()).unwrap();
    assert_eq!(printed.timeless(), report(tmp.path()).timeless());
    assert_eq!(printed.timeless(), saved.timeless());
    assert!(String::from_utf8_lossy(&c.stderr).contains("PASS agreement"));
}

#[test]
fn tampered_trace_fails_integrity() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run_into("two_banks", tmp.path()).status.success());
    let path = tmp.path().join("trace.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    let tampered = text.replacen("\"t\":3,", "\"t\":2,", 1);
    assert_ne!(tampered, text);
    std::fs::write(&path, tampered).unwrap();
    let c = cli(&["check".as_ref(), path.as_os_str()]);
    assert_eq!(c.status.code(), Some(EXIT_FAIL));
    let r: RunReport = serde_json::from_slice(&c.stdout).unwrap();
    assert!(!r.check("trace-integrity").unwrap().pass);
}

#[test]
fn unknown_schemas_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run_into("two_banks", tmp.path()).status.success());
    let path = tmp.path().join("trace.jsonl");
    let old = std::fs::read_to_string(&path).unwrap().replace(TRACE_SCHEMA, "blockgraph-trace/0");
    std::fs::write(&path, old).unwrap();
    let c = cli(&["check".as_ref(), path.as_os_str()]);
    assert_eq!(c.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&c.stderr).contains("schema"));

    let sc = tmp.path().join("old.scn");
    let text = std::fs::read_to_string(scenario("two_banks")).unwrap();
    std::fs::write(&sc, text.replace(SCENARIO_SCHEMA, "blockgraph-scenario/0")).unwrap();
    assert_eq!(cli(&["run".as_ref(), sc.as_os_str()]).status.code(), Some(EXIT_USAGE));
}

#[test]
fn export_dot_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run_into("two_banks", tmp.path()).status.success());
    let trace = tmp.path().join("trace.jsonl");
    let dot = |at: Option<&str>| {
        let mut args: Vec<&std::ffi::OsStr> = vec!["export-dot".as_ref(), trace.as_os_str(), "--bank".as_ref(), "B2".as_ref()];
        if let Some(a) = at {
            args.extend::<[&std::ffi::OsStr; 2]>(["--at".as_ref(), a.as_ref()]);
        }
        let o = cli(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    let full = dot(None);
    assert_eq!(full, dot(None));
    assert!(full.starts_with("digraph"));
    assert!(full.contains("B1") && full.contains("B2"));
    let genesis = dot(Some("0"));
    assert_eq!(genesis.matches("Init").count(), 1, "{genesis}");
    assert!(!genesis.contains("Start"));

    let o = cli(&["export-dot".as_ref(), trace.as_os_str(), "--bank".as_ref(), "B9".as_ref()]);
    assert_eq!(o.status.code(), Some(EXIT_USAGE));
}

#[test]
fn sweep_is_independent_of_worker_count() {
    let src = SweepSource::Family(Family::Honest);
    let one = sweep(&src, 0..12, 1, &Overrides::default(), None).unwrap();
    let two = sweep(&src, 0..12, 2, &Overrides::default(), None).unwrap();
    assert_eq!(one, two);
    assert_eq!((one.runs, one.passed), (12, 12));
}

#[test]
fn mutant_sweeps_fail_and_keep_their_traces() {
    let tmp = tempfile::tempdir().unwrap();
    for (mutant, check) in [("reject-eagerly", "rejection-restriction"), ("drop-some", "termination")] {
        let out = tmp.path().join(mutant);
        let o = cli(&[
            "sweep".as_ref(),
            "--generate".as_ref(),
            "honest".as_ref(),
            "--seeds".as_ref(),
            "0..8".as_ref(),
            "--mutant".as_ref(),
            mutant.as_ref(),
            "--out".as_ref(),
            out.as_os_str(),
        ]);
        assert_eq!(o.status.code(), Some(EXIT_FAIL), "{mutant}");
        let s: blockgraph_cli::SweepSummary = serde_json::from_slice(&o.stdout).unwrap();
        assert!(s.by_check.contains_key(check), "{mutant}: {:?}", s.by_check);
        for f in &s.failed {
            let dir = out.join(format!("seed-{}", f.seed));
            assert!(dir.join("trace.jsonl").exists());
            let again = cli(&["check".as_ref(), dir.join("trace.jsonl").as_os_str()]);
            assert_eq!(again.status.code(), Some(EXIT_FAIL));
        }
    }
}

#[test]
fn explore_reports_a_complete_search() {
    let o = cli(&["explore".as_ref(), scenario("exhaustive_tiny").as_os_str()]);
    assert!(o.status.success());
    let s = String::from_utf8_lossy(&o.stdout);
    assert!(s.lines().last().unwrap().starts_with("PASS"), "{s}");
}
