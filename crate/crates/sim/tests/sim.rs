use std::collections::BTreeSet;

use blockgraph_sim::gen::{byzantine_scenario, honest_scenario, Attack};
use blockgraph_sim::{run, run_prefix, EventKind, Scenario, Trace};
use proptest::prelude::*;

const TWO_BANKS: &str = include_str!("../../cli/scenarios/two_banks.scn");

#[test]
fn runs_are_reproducible() {
    let sc = Scenario::parse(TWO_BANKS).unwrap();
    assert_eq!(run(&sc).unwrap().trace.to_jsonl(), run(&sc).unwrap().trace.to_jsonl());
}

#[test]
fn honest_runs_quiesce_and_converge() {
    for seed in 0..12 {
        let out = run(&honest_scenario(seed)).unwrap();
        assert!(!out.trace.footer.truncated, "seed {seed}");
        assert!(out.trace.integrity_ok());
        let fps: BTreeSet<_> = out.banks.iter().map(|(_, b)| b.graph().fingerprint()).collect();
        assert_eq!(fps.len(), 1, "seed {seed}: honest graphs differ at quiescence");
        for (label, b) in &out.banks {
            assert!(b.decisions().values().all(|d| d.is_terminal()), "seed {seed} {label}");
        }
    }
}

#[test]
fn equivocators_split_into_twins() {
    for a in Attack::ALL {
        let out = run(&byzantine_scenario(1, a)).unwrap();
        let split = out.trace.events.iter().find_map(|e| match &e.kind {
            EventKind::Split { twins } => Some(twins.clone()),
            _ => None,
        });
        assert_eq!(split, Some(vec!["M#0".to_string(), "M#1".to_string()]), "{a:?}");
        assert!(out.bank("M#1").is_some());
        assert!(!out.trace.is_honest("M#0"));
    }
}

#[test]
fn graphs_replay_to_footer_fingerprints() {
    let out = run(&byzantine_scenario(2, Attack::EquivocateAccept)).unwrap();
    let graphs = out.trace.graphs(out.trace.events.len()).unwrap();
    for (label, fp) in &out.trace.footer.graphs {
        assert_eq!(graphs[label].fingerprint().to_hex(), *fp, "{label}");
    }
    let at_start = out.trace.graphs(0).unwrap();
    assert!(at_start.values().all(|g| g.len() == 1));
}

fn roundtrip(t: &Trace) -> Trace {
    Trace::from_jsonl(&t.to_jsonl()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn prefix_runs_are_prefixes(seed in 0u64..10_000, cut in 1u64..400) {
        let sc = honest_scenario(seed);
        let full = run(&sc).unwrap().trace;
        let part = run_prefix(&sc, cut).unwrap().trace;
        let n = part.events.len();
        prop_assert!(n as u64 >= cut.min(full.events.len() as u64));
        prop_assert_eq!(&part.events[..], &full.events[..n]);
        prop_assert_eq!(part.footer.truncated, n < full.events.len());
    }

    #[test]
    fn traces_roundtrip(seed in 0u64..10_000) {
        let t = run(&honest_scenario(seed)).unwrap().trace;
        prop_assert_eq!(roundtrip(&t), t);
    }

    #[test]
    fn scenarios_roundtrip(seed in 0u64..10_000) {
        let sc = byzantine_scenario(seed, Attack::EquivocateStart);
        prop_assert_eq!(Scenario::parse(&sc.to_toml()).unwrap(), sc);
    }
}
