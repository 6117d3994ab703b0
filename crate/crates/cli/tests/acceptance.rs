//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines always reach the output.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use blockgraph::codec::{decode_node, encode_node};
use blockgraph::testkit::{bank_key, Builder, World};
use blockgraph::voting::{threshold_met, voting_power, PowerDistribution, SharedPower};
use blockgraph::{is_proper, total_balance, BankId, Blockgraph, Digest, Node, NodeKind, Parent, Payload, TxKey};
use blockgraph_cli::{exhaustive, load_scenario, RunReport, EXIT_FAIL};
use blockgraph_oracle::{
    check_all, check_positive_balance, naive_total_balance, reachability_matrix, CheckReport, OracleConfig,
    AGREEMENT, ORACLE_EQUIVALENCE, POSITIVE_BALANCE, PROPER_ALWAYS, REJECTION_RESTRICTION, TERMINATION,
};
use blockgraph_sim::explore::ExploreConfig;
use blockgraph_sim::gen::{byzantine_scenario, honest_scenario, random_graph, Attack};
use blockgraph_sim::{run, run_prefix, DelayPolicy, Event, EventKind, Scenario, Trace};

const HONEST_SEEDS: u64 = 500;
const BYZANTINE_SEEDS: u64 = 70;
const SCHEDULES: u64 = 50;
const MIN_SNAPSHOTS: u64 = 10_000;
const RANDOM_GRAPHS: u64 = 100;
const ORACLE: OracleConfig = OracleConfig { max_nodes: 2000 };

type Verdict = Result<String, String>;

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn bundled(name: &str) -> Scenario {
    load_scenario(&scenarios_dir().join(format!("{name}.scn"))).expect("bundled scenario parses")
}

fn find<'a>(reports: &'a [CheckReport], name: &str) -> &'a CheckReport {
    reports.iter().find(|r| r.name == name).expect("check exists")
}

fn require(reports: &[CheckReport], names: &[&str], what: &str) -> Result<(), String> {
    for n in names {
        let r = find(reports, n);
        if !r.pass {
            return Err(format!("{what}: {n} failed: {:?}", r.counterexample));
        }
    }
    Ok(())
}

/// Totals gathered while running criterion 1, reused by 3 and 7.
#[derive(Default)]
struct Sweep {
    snapshots: u64,
    equivalent: u64,
    skipped: u64,
}

fn criterion_1(sw: &mut Sweep) -> Verdict {
    let t0 = Instant::now();
    let (mut uniform, mut adversarial) = (0, 0);
    for seed in 0..HONEST_SEEDS {
        let sc = honest_scenario(seed);
        match sc.delay {
            DelayPolicy::Adversarial => adversarial += 1,
            _ => uniform += 1,
        }
        let out = run(&sc).map_err(|e| e.to_string())?;
        let reports = check_all(&out.trace, &ORACLE);
        require(
            &reports,
            &[AGREEMENT, POSITIVE_BALANCE, TERMINATION, REJECTION_RESTRICTION],
            &format!("seed {seed}"),
        )?;
        sw.snapshots += find(&reports, POSITIVE_BALANCE).checked;
        let eq = find(&reports, ORACLE_EQUIVALENCE);
        if !eq.pass {
            return Err(format!("seed {seed}: naive balance differs: {:?}", eq.counterexample));
        }
        sw.equivalent += eq.checked;
        sw.skipped += eq.notes.len() as u64;
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs > 120.0 {
        return Err(format!("{HONEST_SEEDS} scenarios took {secs:.1}s, over 2 minutes"));
    }
    Ok(format!(
        "{HONEST_SEEDS} honest scenarios ({uniform} uniform, {adversarial} adversarial) pass all four properties in {secs:.1}s"
    ))
}

fn accepted_keys(t: &Trace, bank: &str) -> BTreeSet<String> {
    t.events
        .iter()
        .filter(|e| e.bank == bank)
        .filter_map(|e| match &e.kind {
            EventKind::TxAccepted { key } => Some(key.clone()),
            _ => None,
        })
        .collect()
}

fn criterion_2() -> Verdict {
    let base = bundled("honest_five_banks");
    let mut outcomes = BTreeSet::new();
    let mut schedules = BTreeSet::new();
    for seed in 1..=SCHEDULES {
        let mut sc = base.clone();
        sc.seed = seed;
        let out = run(&sc).map_err(|e| e.to_string())?;
        let r = blockgraph_cli::build_report(&out.trace, 0)?;
        if !r.pass {
            return Err(format!("seed {seed}: checks failed"));
        }
        let order: Vec<(u64, String, &str)> =
            out.trace.events.iter().map(|e| (e.t, e.bank.clone(), e.kind.name())).collect();
        schedules.insert(format!("{order:?}"));
        for b in r.banks.iter().filter(|b| b.honest) {
            outcomes.insert((accepted_keys(&out.trace, &b.label), b.applied.clone(), b.balances.clone()));
        }
    }
    if schedules.len() as u64 != SCHEDULES {
        return Err(format!("only {} distinct schedules", schedules.len()));
    }
    if outcomes.len() != 1 {
        return Err(format!("{} distinct final outcomes across banks and schedules", outcomes.len()));
    }
    let (acc, _, bal) = outcomes.into_iter().next().expect("one outcome");
    Ok(format!(
        "{SCHEDULES} distinct schedules, 5 banks each: one accepted set ({} txs) and one balance map {bal:?}",
        acc.len()
    ))
}

/// Two unlinked blocks that each spend most of bob's money at one seq.
fn double_spend(init_digest: Digest) -> (Vec<Node>, Blockgraph) {
    let w = World::new(&[("B1", &[("alice", 60)]), ("B2", &[("bob", 40)])]);
    let t1 = w.tx("bob@B2", "alice@B1", 50, 1);
    let t2 = w.tx("bob@B2", "alice@B1", 45, 1);
    let mut nodes = Vec::new();
    for (bank, t) in [("X1", t1), ("X2", t2)] {
        let key = bank_key(w.scheme, bank);
        let mut parent = Parent::Init(init_digest);
        for (seq, payload) in [(1, Payload::Start(vec![t])), (2, Payload::Close), (3, Payload::Accept)] {
            let n = Node::signed(&key, seq, parent, payload);
            parent = Parent::Node(n.reference().expect("chain node"));
            nodes.push(n);
        }
    }
    let mut b = Builder::new(w);
    for n in &nodes {
        b.insert(n.clone()).expect("hand-built node inserts");
    }
    (nodes, b.g)
}

fn criterion_3(sw: &Sweep) -> Verdict {
    if sw.snapshots < MIN_SNAPSHOTS {
        return Err(format!("only {} snapshots", sw.snapshots));
    }
    let mut t = run(&bundled("two_banks")).map_err(|e| e.to_string())?.trace;
    let init = decode_node(&hex::decode(&t.header.init).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let (nodes, g) = double_spend(init.digest());
    if g.init_digest() != init.digest() {
        return Err("hand-built graph does not share the run's Init".into());
    }
    if is_proper(&g) {
        return Err("hand-built graph is proper".into());
    }
    let engine = total_balance(&g);
    let naive = naive_total_balance(&g, 100)?;
    let low = engine.balances.values().min().copied().unwrap_or(0);
    if low >= 0 || naive != engine {
        return Err(format!("expected a negative balance from both engines, got {low}"));
    }
    let (mut i, time) = (t.events.len() as u64, t.footer.end_time);
    for n in nodes {
        let digest = n.digest().to_hex();
        let created = EventKind::NodeCreated {
            digest: digest.clone(),
            node: hex::encode(encode_node(&n)),
        };
        for kind in [created, EventKind::NodeInserted { digest }] {
            t.events.push(Event {
                i,
                t: time,
                bank: "B1".into(),
                kind,
            });
            i += 1;
        }
    }
    t.seal();
    let r = check_positive_balance(&t);
    if r.pass {
        return Err("positive-balance oracle missed the injected improper graph".into());
    }
    Ok(format!(
        "{} snapshots non-negative; improper witness drives bob to {low} and the oracle flags it after {} events",
        sw.snapshots,
        r.counterexample.map_or(0, |c| c.prefix)
    ))
}

/// Pairs of distinct Accepts by one bank over one Close in the union of
/// the honest final graphs, with whether both accept the same set.
fn shared_close_accepts(out: &blockgraph_sim::Outcome) -> Vec<bool> {
    let mut union: BTreeMap<Digest, std::sync::Arc<Node>> = BTreeMap::new();
    for (_, b) in out.honest() {
        for n in b.graph().nodes() {
            union.insert(n.digest(), n.clone());
        }
    }
    let honest = out.honest().next().expect("an honest bank").1.graph();
    let parent_close = |mut d: Digest| -> Option<Digest> {
        loop {
            let n = union.get(&d)?;
            match n.kind() {
                NodeKind::Close => return Some(d),
                NodeKind::Update | NodeKind::Accept => d = n.chain()?.parent.hash(),
                _ => return None,
            }
        }
    };
    let mut by_close: BTreeMap<(BankId, Digest), Vec<Digest>> = BTreeMap::new();
    for (d, n) in &union {
        if n.kind() == NodeKind::Accept {
            if let Some(c) = parent_close(n.chain().expect("chain").parent.hash()) {
                by_close.entry((n.bank().expect("bank"), c)).or_default().push(*d);
            }
        }
    }
    let mut out_pairs = Vec::new();
    for ((_, close), accepts) in by_close.into_iter().filter(|(_, v)| v.len() > 1) {
        let Some(graph) = [honest].into_iter().find(|g| accepts.iter().all(|a| g.contains(a))) else {
            continue;
        };
        let start_txs: BTreeSet<TxKey> = {
            let mut d = union[&close].chain().expect("chain").parent.hash();
            loop {
                let n = &union[&d];
                if n.kind() == NodeKind::Start {
                    break n.transactions().iter().map(|t| t.key()).collect();
                }
                d = n.chain().expect("chain").parent.hash();
            }
        };
        let sets: BTreeSet<BTreeSet<TxKey>> = accepts
            .iter()
            .map(|a| {
                let rep = graph.representing(a).expect("accept in graph");
                total_balance(&rep).applied.intersection(&start_txs).copied().collect()
            })
            .collect();
        out_pairs.push(sets.len() == 1);
    }
    out_pairs
}

fn criterion_4(sw: &mut Sweep) -> Verdict {
    let mut runs = 0;
    let mut forks = 0;
    for seed in 0..BYZANTINE_SEEDS {
        for a in Attack::ALL {
            let out = run(&byzantine_scenario(seed, a)).map_err(|e| e.to_string())?;
            let reports = check_all(&out.trace, &ORACLE);
            let what = format!("{a:?} seed {seed}");
            let proper = find(&reports, PROPER_ALWAYS);
            if !proper.notes.iter().any(|n| n.starts_with("premise holds")) {
                return Err(format!("{what}: power premise not met: {:?}", proper.notes));
            }
            require(&reports, &[PROPER_ALWAYS, AGREEMENT, POSITIVE_BALANCE, ORACLE_EQUIVALENCE], &what)?;
            sw.equivalent += find(&reports, ORACLE_EQUIVALENCE).checked;
            sw.skipped += find(&reports, ORACLE_EQUIVALENCE).notes.len() as u64;
            if a == Attack::EquivocateAccept {
                let pairs = shared_close_accepts(&out);
                if pairs.iter().any(|same| !same) {
                    return Err(format!("{what}: two Accepts over one Close disagree"));
                }
                forks += pairs.len();
            }
            runs += 1;
        }
    }
    for name in ["equivocate_start", "equivocate_close", "equivocate_accept_shared_close"] {
        let out = run(&bundled(name)).map_err(|e| e.to_string())?;
        require(&check_all(&out.trace, &ORACLE), &[PROPER_ALWAYS, AGREEMENT, POSITIVE_BALANCE], name)?;
        if name == "equivocate_accept_shared_close" {
            let pairs = shared_close_accepts(&out);
            if pairs.is_empty() || pairs.iter().any(|same| !same) {
                return Err(format!("{name}: expected two Accepts over one Close with the same set, got {pairs:?}"));
            }
            forks += pairs.len();
        }
    }
    if runs < 200 || forks == 0 {
        return Err(format!("{runs} runs, {forks} shared-Close forks"));
    }
    Ok(format!(
        "{runs} Byzantine runs at <= 1/3 power keep the honest union proper; {forks} Accept pairs over one Close apply identical sets"
    ))
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_blockgraph"))
}

fn run_bin(scenario: &Path, out: &Path) -> (i32, String) {
    let o = bin().arg("run").arg(scenario).arg("--out").arg(out).output().expect("binary runs");
    (o.status.code().unwrap_or(-1), String::from_utf8_lossy(&o.stdout).into_owned())
}

fn read_report(dir: &Path) -> RunReport {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).expect("report written")).expect("report parses")
}

fn criterion_5(tmp: &Path) -> Verdict {
    let dir = tmp.join("overpower");
    let (code, _) = run_bin(&scenarios_dir().join("overpower_attack.scn"), &dir);
    if code != EXIT_FAIL {
        return Err(format!("exit code {code}, expected {EXIT_FAIL}"));
    }
    let r = read_report(&dir);
    let p = r.check(PROPER_ALWAYS).ok_or("no proper-always report")?;
    let cx = p.counterexample.as_ref().filter(|_| !p.pass).ok_or("proper-always did not fail")?;
    let replay = run_prefix(&bundled("overpower_attack"), cx.prefix).map_err(|e| e.to_string())?;
    let again = check_all(&replay.trace, &ORACLE);
    let rp = find(&again, PROPER_ALWAYS);
    if rp.pass || rp.counterexample.as_ref().map(|c| &c.objects) != Some(&cx.objects) {
        return Err("replaying the counterexample prefix does not reproduce the violation".into());
    }
    let double = r
        .banks
        .iter()
        .filter(|b| b.honest)
        .map(|b| b.applied.clone())
        .collect::<BTreeSet<_>>()
        .len();
    Ok(format!(
        "exit 1; improper pair after {} events, reproduced by replaying that prefix; honest banks end with {double} different applied sets",
        cx.prefix
    ))
}

fn criterion_6() -> Verdict {
    let w = World::new(&[("B1", &[("alice", 40)]), ("B2", &[("bob", 30)]), ("B3", &[("charlie", 30)])]);
    let t20 = w.tx("alice@B1", "bob@B2", 20, 1).key().id().to_hex();
    let mut lines = Vec::new();
    for (name, applied, alice, rejected) in [
        ("conflict_mutual", vec![], 40, 2),
        ("conflict_one_way", vec![t20.clone()], 20, 1),
    ] {
        let out = run(&bundled(name)).map_err(|e| e.to_string())?;
        let r = blockgraph_cli::build_report(&out.trace, 0)?;
        if !r.pass {
            return Err(format!("{name}: checks failed"));
        }
        for b in r.banks.iter().filter(|b| b.honest) {
            let conflicts = b.rejected.get("conflict").copied().unwrap_or(0);
            if b.applied != applied || b.balances["alice@B1"] != alice || conflicts != rejected {
                return Err(format!(
                    "{name} at {}: applied {:?}, alice {}, {conflicts} conflict rejections",
                    b.label, b.applied, b.balances["alice@B1"]
                ));
            }
        }
        lines.push(format!("{name}: alice {alice}, {} applied", applied.len()));
    }
    Ok(lines.join("; "))
}

fn criterion_7(sw: &Sweep) -> Verdict {
    if sw.skipped > 0 {
        return Err(format!("{} final graphs were too large for the naive oracle", sw.skipped));
    }
    let mut pairs = 0u64;
    for seed in 0..RANDOM_GRAPHS {
        let nodes = 20 + (seed as usize * 37) % 181;
        let g = random_graph(seed, 2 + seed as usize % 4, nodes);
        if g.len() > 200 {
            return Err(format!("random graph {seed} has {} nodes", g.len()));
        }
        let m = reachability_matrix(&g)?;
        let ds: Vec<Digest> = g.digests().collect();
        for (a, da) in ds.iter().enumerate() {
            for (b, db) in ds.iter().enumerate() {
                if m[a][b] != g.acknowledges(da, db).map_err(|e| e.to_string())? {
                    return Err(format!("graph {seed}: reachability differs at ({a}, {b})"));
                }
                pairs += 1;
            }
        }
        if naive_total_balance(&g, 500)? != total_balance(&g) {
            return Err(format!("graph {seed}: naive balance differs"));
        }
    }
    Ok(format!(
        "{} final graphs equal the engine; {RANDOM_GRAPHS} random graphs agree on {pairs} reachability pairs",
        sw.equivalent
    ))
}

fn criterion_8() -> Verdict {
    let mut b = Builder::new(World::new(&[("B1", &[("u1", 60)]), ("B2", &[("u2", 40)]), ("B3", &[])]));
    let t = b.w.tx("u1@B1", "u2@B2", 30, 1);
    b.start("B3", vec![t]);
    let p = voting_power(&b.g, SharedPower::Simple).map_err(|e| e.to_string())?;
    let (b1, b2) = (b.w.bank("B1"), b.w.bank("B2"));
    let want = PowerDistribution {
        solo: [(b1, 30), (b2, 40)].into(),
        shared: [([b1, b2].into(), 30)].into(),
        total: 100,
    };
    let solo: BTreeMap<_, _> = p.solo.iter().filter(|(_, v)| **v != 0).map(|(k, v)| (*k, *v)).collect();
    if solo != want.solo || p.shared != want.shared || p.total != 100 {
        return Err(format!("worked example gives {}", p.report()));
    }
    let pair: BTreeSet<BankId> = [b1, b2].into();
    if p.counted(&pair) != 100 || p.counted(&[b2].into()) != 40 || !threshold_met(&p, &pair) {
        return Err("coalition counting is off".into());
    }
    let d = |x: i128| PowerDistribution {
        solo: [(b1, x), (b2, 300 - x)].into(),
        shared: BTreeMap::new(),
        total: 300,
    };
    if threshold_met(&d(200), &[b1].into()) || !threshold_met(&d(201), &[b1].into()) {
        return Err("threshold boundary is off".into());
    }
    Ok("solo {B1: 30, B2: 40}, shared {{B1, B2}: 30}, total 100; 200/300 fails and 201/300 passes".into())
}

fn criterion_9(tmp: &Path) -> Verdict {
    let mut names: Vec<PathBuf> = std::fs::read_dir(scenarios_dir())
        .map_err(|e| e.to_string())?
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "scn"))
        .collect();
    names.sort();
    for p in &names {
        let stem = p.file_stem().expect("stem").to_string_lossy().into_owned();
        let (a, b) = (tmp.join(format!("{stem}-a")), tmp.join(format!("{stem}-b")));
        let (ca, _) = run_bin(p, &a);
        let (cb, _) = run_bin(p, &b);
        let ta = std::fs::read(a.join("trace.jsonl")).map_err(|e| e.to_string())?;
        let tb = std::fs::read(b.join("trace.jsonl")).map_err(|e| e.to_string())?;
        let (ra, rb) = (read_report(&a), read_report(&b));
        if ca != cb || ta != tb || ra.timeless().to_json() != rb.timeless().to_json() {
            return Err(format!("{stem}: runs differ"));
        }
        let o = bin().arg("check").arg(a.join("trace.jsonl")).output().map_err(|e| e.to_string())?;
        let rc: RunReport = serde_json::from_slice(&o.stdout).map_err(|e| e.to_string())?;
        if rc.timeless().to_json() != ra.timeless().to_json() {
            return Err(format!("{stem}: check regenerates a different report"));
        }
    }
    Ok(format!(
        "{} bundled scenarios: identical trace and report bytes across two runs and on regeneration",
        names.len()
    ))
}

fn criterion_10() -> Verdict {
    let sc = bundled("exhaustive_tiny");
    let txs: usize = sc.users.iter().map(|u| u.actions.len()).sum();
    if sc.banks.len() != 2 || txs != 3 {
        return Err("exhaustive_tiny must have 2 banks and 3 transactions".into());
    }
    let t0 = Instant::now();
    let (r, v) = exhaustive(&sc, ExploreConfig::default()).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    if let Some((path, e)) = r.violation {
        return Err(format!("{e} after {path:?}"));
    }
    if r.exhausted_budget || r.cut > 0 || secs > 60.0 {
        return Err(format!("incomplete search ({} cut, {secs:.1}s)", r.cut));
    }
    Ok(format!(
        "{} schedules over {} distinct states, {} steps checked, in {secs:.2}s",
        r.schedules, r.states, v.steps
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut sw = Sweep::default();
    let mut failed = 0;
    let mut report = |n: u32, v: Verdict| {
        match &v {
            Ok(m) => println!("PASS criterion {n}: {m}"),
            Err(m) => {
                failed += 1;
                println!("FAIL criterion {n}: {m}")
            }
        }
    };
    report(1, criterion_1(&mut sw));
    report(2, criterion_2());
    report(3, criterion_3(&sw));
    report(4, criterion_4(&mut sw));
    report(5, criterion_5(tmp.path()));
    report(6, criterion_6());
    report(7, criterion_7(&sw));
    report(8, criterion_8());
    report(9, criterion_9(tmp.path()));
    report(10, criterion_10());
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
