//! Trace checkers. One pass over the events rebuilds every bank's graph
//! membership on an oracle-owned DAG and judges each property as it goes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use blockgraph::codec::{decode_node, decode_transaction};
use blockgraph::{total_balance, AccountId, BankId, Blockgraph, Digest, InitNode, Node, NodeKind, Scheme, TxKey};
use blockgraph_sim::{EventKind, Trace};

use crate::dag::Dag;
use crate::ledger::{close_verdicts, equivocators, naive_total_balance, power, DEFAULT_MAX_NODES};

pub const AGREEMENT: &str = "agreement";
pub const POSITIVE_BALANCE: &str = "positive-balance";
pub const TERMINATION: &str = "termination";
pub const REJECTION_RESTRICTION: &str = "rejection-restriction";
pub const PROPER_ALWAYS: &str = "proper-always";
pub const EVENTUAL_DELIVERY: &str = "eventual-delivery";
pub const TRACE_INTEGRITY: &str = "trace-integrity";
pub const ORACLE_EQUIVALENCE: &str = "oracle-equivalence";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterexample {
    /// Replaying this many events reproduces the failure.
    pub prefix: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank: Option<String>,
    pub objects: Vec<String>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub pass: bool,
    /// How many individual judgements the check made.
    pub checked: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<Counterexample>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl CheckReport {
    fn new(name: &str) -> Self {
        CheckReport {
            name: name.to_string(),
            pass: true,
            checked: 0,
            counterexample: None,
            notes: Vec::new(),
        }
    }

    fn fail(&mut self, cx: Counterexample) {
        if self.pass {
            self.pass = false;
            self.counterexample = Some(cx);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    /// Largest graph handed to the naive balance oracle.
    pub max_nodes: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            max_nodes: DEFAULT_MAX_NODES,
        }
    }
}

/// The condition that made a rejection legitimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum License {
    /// Some smaller seq of the source has no applied transaction.
    EarlierSeqMissing,
    /// The user issued a different transaction with the same seq.
    ConflictingTransaction,
    /// The source balance is below the amount.
    InsufficientBalance,
}

impl License {
    pub fn name(self) -> &'static str {
        match self {
            License::EarlierSeqMissing => "earlier-seq-missing",
            License::ConflictingTransaction => "conflicting-transaction",
            License::InsufficientBalance => "insufficient-balance",
        }
    }
}

/// Finds a condition licensing the rejection of `t`, given what the bank
/// has applied and every transaction it knows of.
pub fn license(
    t: &TxKey,
    applied: &BTreeSet<TxKey>,
    balance: i128,
    known: impl IntoIterator<Item = TxKey>,
) -> Option<License> {
    let gap = (1..t.seq).any(|i| !applied.iter().any(|k| k.source == t.source && k.seq == i));
    if gap {
        return Some(License::EarlierSeqMissing);
    }
    if known.into_iter().any(|k| k.source == t.source && k.seq == t.seq && (k.dest != t.dest || k.amount != t.amount)) {
        return Some(License::ConflictingTransaction);
    }
    if balance < t.amount.0 as i128 {
        return Some(License::InsufficientBalance);
    }
    None
}

/// Licence for rejecting `t` against a whole engine graph plus the
/// transactions submitted to the bank directly.
pub fn rejection_license(g: &Blockgraph, t: &TxKey, submitted: &[TxKey]) -> Result<Option<License>, String> {
    let dag = Dag::of_graph(g)?;
    let (ok, _) = crate::ledger::applied(&dag, &|_| true);
    let bal = crate::ledger::balances(&dag.init, &ok);
    let balance = bal.get(&t.source).copied().unwrap_or(0);
    let known = dag
        .nodes
        .iter()
        .flat_map(|n| n.txs.iter().copied())
        .chain(submitted.iter().copied());
    Ok(license(t, &ok, balance, known))
}

/// What one bank label has seen so far.
#[derive(Debug, Clone, Default)]
struct BankView {
    member: Vec<bool>,
    order: Vec<usize>,
    closes: BTreeSet<usize>,
    applied: BTreeSet<TxKey>,
    balances: BTreeMap<AccountId, i128>,
    submitted: BTreeSet<TxKey>,
    /// Latest decision per key: true for accepted.
    accepted: BTreeSet<TxKey>,
    rejected: BTreeSet<TxKey>,
    retried_after: BTreeSet<TxKey>,
}

impl BankView {
    fn has(&self, i: usize) -> bool {
        self.member.get(i).copied().unwrap_or(false)
    }
}

struct Ctx<'t> {
    trace: &'t Trace,
    cfg: OracleConfig,
    dag: Dag,
    nodes: Vec<Arc<Node>>,
    txs: HashMap<String, TxKey>,
    banks: BTreeMap<String, BankView>,
    union: Vec<bool>,
    union_order: Vec<usize>,
    reports: BTreeMap<&'static str, CheckReport>,
    licensed: BTreeMap<&'static str, u64>,
    sent: BTreeSet<u64>,
    delivered: BTreeSet<u64>,
    malformed: Option<(u64, String)>,
}

fn init_of(trace: &Trace) -> Result<InitNode, String> {
    let bytes = hex::decode(&trace.header.init).map_err(|e| format!("init: {e}"))?;
    match decode_node(&bytes).map_err(|e| format!("init: {e}"))? {
        Node::Init(i) => Ok(i),
        _ => Err("header init is not an Init node".into()),
    }
}

/// Runs every check over a trace.
pub fn check_all(trace: &Trace, cfg: &OracleConfig) -> Vec<CheckReport> {
    let init = match init_of(trace) {
        Ok(i) => i,
        Err(e) => {
            let mut r = CheckReport::new(TRACE_INTEGRITY);
            r.fail(Counterexample {
                prefix: 0,
                bank: None,
                objects: Vec::new(),
                detail: e,
            });
            return vec![r];
        }
    };
    let mut ctx = Ctx {
        trace,
        cfg: *cfg,
        dag: Dag::new(&init),
        nodes: vec![Arc::new(Node::Init(init))],
        txs: HashMap::new(),
        banks: BTreeMap::new(),
        union: vec![true],
        union_order: vec![0],
        reports: [
            AGREEMENT,
            POSITIVE_BALANCE,
            TERMINATION,
            REJECTION_RESTRICTION,
            PROPER_ALWAYS,
            EVENTUAL_DELIVERY,
            TRACE_INTEGRITY,
            ORACLE_EQUIVALENCE,
        ]
        .into_iter()
        .map(|n| (n, CheckReport::new(n)))
        .collect(),
        licensed: BTreeMap::new(),
        sent: BTreeSet::new(),
        delivered: BTreeSet::new(),
        malformed: None,
    };
    for b in &trace.header.banks {
        ctx.bank(&b.name);
    }
    for e in &trace.events {
        if let Err(msg) = ctx.event(e.i, &e.bank, &e.kind) {
            ctx.malformed.get_or_insert((e.i, msg));
        }
    }
    ctx.finish()
}

fn pick(reports: &[CheckReport], name: &str) -> CheckReport {
    reports
        .iter()
        .find(|r| r.name == name)
        .cloned()
        .unwrap_or_else(|| CheckReport::new(name))
}

pub fn check_agreement(tr: &Trace) -> CheckReport {
    pick(&check_all(tr, &OracleConfig::default()), AGREEMENT)
}

pub fn check_positive_balance(tr: &Trace) -> CheckReport {
    pick(&check_all(tr, &OracleConfig::default()), POSITIVE_BALANCE)
}

pub fn check_termination(tr: &Trace) -> CheckReport {
    pick(&check_all(tr, &OracleConfig::default()), TERMINATION)
}

pub fn check_rejection_restriction(tr: &Trace) -> CheckReport {
    pick(&check_all(tr, &OracleConfig::default()), REJECTION_RESTRICTION)
}

pub fn check_proper_always(tr: &Trace) -> CheckReport {
    pick(&check_all(tr, &OracleConfig::default()), PROPER_ALWAYS)
}

impl Ctx<'_> {
    fn bank(&mut self, label: &str) -> &mut BankView {
        let init = &self.dag.init;
        self.banks.entry(label.to_string()).or_insert_with(|| {
            let mut v = BankView {
                balances: init.iter().copied().collect(),
                ..BankView::default()
            };
            v.member = vec![true];
            v.order = vec![0];
            v
        })
    }

    fn report(&mut self, name: &'static str) -> &mut CheckReport {
        self.reports.get_mut(name).expect("registered")
    }

    fn key(&self, id: &str) -> Result<TxKey, String> {
        self.txs
            .get(id)
            .copied()
            .ok_or_else(|| format!("decision about unknown transaction {id}"))
    }

    fn event(&mut self, i: u64, label: &str, kind: &EventKind) -> Result<(), String> {
        match kind {
            EventKind::NodeCreated { digest, node } => {
                let bytes = hex::decode(node).map_err(|e| e.to_string())?;
                let n = decode_node(&bytes).map_err(|e| e.to_string())?;
                if n.digest().to_hex() != *digest {
                    return Err(format!("node-created digest mismatch for {digest}"));
                }
                let before = self.dag.len();
                let idx = self.dag.add(&n)?;
                if idx == before {
                    for t in n.transactions() {
                        self.txs.insert(t.key().id().to_hex(), t.key());
                    }
                    self.nodes.push(Arc::new(n));
                }
                self.insert(i, label, idx);
            }
            EventKind::NodeInserted { digest } => {
                let d = Digest::from_hex(digest).ok_or("bad digest")?;
                let idx = self.dag.find(&d).ok_or_else(|| format!("inserted node {digest} was never created"))?;
                self.insert(i, label, idx);
            }
            EventKind::Split { twins } => {
                let base = self.bank(label).clone();
                for t in twins {
                    self.banks.insert(t.clone(), base.clone());
                }
            }
            EventKind::MessageSent { msg, .. } => {
                self.sent.insert(*msg);
            }
            EventKind::MessageDelivered { msg, tx, .. } => {
                self.delivered.insert(*msg);
                if let Some(tx) = tx {
                    let bytes = hex::decode(tx).map_err(|e| e.to_string())?;
                    let t = decode_transaction(&bytes).map_err(|e| e.to_string())?;
                    self.txs.insert(t.key().id().to_hex(), t.key());
                    self.bank(label).submitted.insert(t.key());
                }
            }
            EventKind::TxAccepted { key } => {
                let k = self.key(key)?;
                let v = self.bank(label);
                v.accepted.insert(k);
                v.retried_after.remove(&k);
            }
            EventKind::TxRetried { key } => {
                let k = self.key(key)?;
                let v = self.bank(label);
                if !v.accepted.contains(&k) {
                    v.retried_after.insert(k);
                }
            }
            EventKind::TxRejected { key, cause } => {
                let k = self.key(key)?;
                let v = self.bank(label);
                if v.accepted.contains(&k) {
                    if self.trace.is_honest(label) {
                        self.report(REJECTION_RESTRICTION).fail(Counterexample {
                            prefix: i + 1,
                            bank: Some(label.to_string()),
                            objects: vec![key.clone()],
                            detail: "an accepted transaction was rejected".into(),
                        });
                    }
                    return Ok(());
                }
                v.rejected.insert(k);
                v.retried_after.remove(&k);
                if self.trace.is_honest(label) {
                    self.judge_rejection(i, label, &k, key, cause);
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn judge_rejection(&mut self, i: u64, label: &str, k: &TxKey, id: &str, cause: &str) {
        let v = &self.banks[label];
        let balance = v.balances.get(&k.source).copied().unwrap_or(0);
        let dag = &self.dag;
        let known = v
            .order
            .iter()
            .flat_map(|&n| dag.nodes[n].txs.iter().copied())
            .chain(v.submitted.iter().copied());
        let found = license(k, &v.applied, balance, known);
        self.report(REJECTION_RESTRICTION).checked += 1;
        match found {
            Some(l) => *self.licensed.entry(l.name()).or_default() += 1,
            None => self.report(REJECTION_RESTRICTION).fail(Counterexample {
                prefix: i + 1,
                bank: Some(label.to_string()),
                objects: vec![id.to_string()],
                detail: format!("rejected as {cause} but no condition of the restriction holds (balance {balance})"),
            }),
        }
    }

    fn insert(&mut self, i: u64, label: &str, idx: usize) {
        let honest = self.trace.is_honest(label);
        let v = self.bank(label);
        if v.has(idx) {
            return;
        }
        if v.member.len() <= idx {
            v.member.resize(idx + 1, false);
        }
        v.member[idx] = true;
        v.order.push(idx);
        if !honest {
            return;
        }
        self.report(POSITIVE_BALANCE).checked += 1;
        if self.dag.nodes[idx].kind == NodeKind::Accept {
            if let Some(c) = self.dag.close_of(idx) {
                self.apply_close(i, label, c);
            }
        }
        if !self.union.get(idx).copied().unwrap_or(false) {
            if self.union.len() <= idx {
                self.union.resize(idx + 1, false);
            }
            self.union[idx] = true;
            self.union_order.push(idx);
            self.check_new_pairs(i, idx);
        }
    }

    fn apply_close(&mut self, i: u64, label: &str, c: usize) {
        if !self.bank(label).closes.insert(c) {
            return;
        }
        let fresh: Vec<TxKey> = close_verdicts(&self.dag, c).iter().filter(|(_, ok)| *ok).map(|(t, _)| *t).collect();
        let v = self.banks.get_mut(label).expect("bank exists");
        let mut negative = Vec::new();
        for t in fresh {
            if v.applied.insert(t) {
                *v.balances.entry(t.source).or_default() -= t.amount.0 as i128;
                *v.balances.entry(t.dest).or_default() += t.amount.0 as i128;
                if v.balances[&t.source] < 0 {
                    negative.push(format!("{}/{} = {}", t.source.bank, t.source.user, v.balances[&t.source]));
                }
            }
        }
        if !negative.is_empty() {
            let d = self.dag.nodes[c].digest.to_hex();
            self.report(POSITIVE_BALANCE).fail(Counterexample {
                prefix: i + 1,
                bank: Some(label.to_string()),
                objects: std::iter::once(d).chain(negative).collect(),
                detail: "a balance went negative after accepting this Close's block".into(),
            });
        }
    }

    fn check_new_pairs(&mut self, i: u64, idx: usize) {
        let dag = &self.dag;
        let kind = dag.nodes[idx].kind;
        let target = |x: usize| match kind {
            NodeKind::Close => dag.start_of(x),
            _ => dag.close_of(x),
        };
        if !matches!(kind, NodeKind::Close | NodeKind::Accept) {
            return;
        }
        let mut bad = None;
        for &other in &self.union_order {
            if other == idx || dag.nodes[other].kind != kind {
                continue;
            }
            let linked = target(other).is_some_and(|t| dag.acks(idx, t)) || target(idx).is_some_and(|t| dag.acks(other, t));
            if !linked {
                bad = Some(other);
                break;
            }
        }
        self.report(PROPER_ALWAYS).checked += 1;
        if let Some(other) = bad {
            let objects = vec![self.dag.nodes[other].digest.to_hex(), self.dag.nodes[idx].digest.to_hex()];
            self.report(PROPER_ALWAYS).fail(Counterexample {
                prefix: i + 1,
                bank: None,
                objects,
                detail: format!("two {}s in the honest union are not linked", kind.name()),
            });
        }
    }

    fn finish(mut self) -> Vec<CheckReport> {
        let truncated = self.trace.footer.truncated;
        let n = self.trace.events.len() as u64;
        let honest = self.trace.honest_banks();

        // integrity
        {
            let mut problems = Vec::new();
            if !self.trace.integrity_ok() {
                problems.push("integrity hash does not match the events".to_string());
            }
            if let Some((i, m)) = &self.malformed {
                problems.push(format!("event {i}: {m}"));
            }
            for (label, fp) in &self.trace.footer.graphs {
                let Some(v) = self.banks.get(label) else {
                    problems.push(format!("footer names unknown bank {label}"));
                    continue;
                };
                let set: BTreeSet<Digest> = v.order.iter().map(|&k| self.dag.nodes[k].digest).collect();
                let mut buf = Vec::new();
                for d in set {
                    buf.extend_from_slice(&d.0);
                }
                if Digest::of(&buf).to_hex() != *fp {
                    problems.push(format!("final graph of {label} does not match the footer"));
                }
            }
            let r = self.report(TRACE_INTEGRITY);
            r.checked = n;
            if let Some(first) = problems.first().cloned() {
                r.fail(Counterexample {
                    prefix: n,
                    bank: None,
                    objects: problems,
                    detail: first,
                });
            }
        }

        let need_complete = |r: &mut CheckReport| {
            if truncated {
                r.fail(Counterexample {
                    prefix: n,
                    bank: None,
                    objects: Vec::new(),
                    detail: "trace is truncated; the property needs a run to quiescence".into(),
                });
            }
        };

        // agreement
        {
            let all: BTreeSet<TxKey> = honest
                .iter()
                .flat_map(|b| self.banks[b].accepted.iter().copied())
                .collect();
            let mut r = CheckReport::new(AGREEMENT);
            need_complete(&mut r);
            for k in &all {
                r.checked += 1;
                if let Some(b) = honest.iter().find(|b| !self.banks[*b].accepted.contains(k)) {
                    r.fail(Counterexample {
                        prefix: n,
                        bank: Some(b.clone()),
                        objects: vec![k.id().to_hex()],
                        detail: "accepted by one honest bank but never by this one".into(),
                    });
                }
            }
            self.reports.insert(AGREEMENT, r);
        }

        // termination
        {
            let mut r = CheckReport::new(TERMINATION);
            need_complete(&mut r);
            for b in &honest {
                let v = &self.banks[b];
                for k in &v.submitted {
                    r.checked += 1;
                    let terminal =
                        v.accepted.contains(k) || (v.rejected.contains(k) && !v.retried_after.contains(k));
                    if !terminal {
                        r.fail(Counterexample {
                            prefix: n,
                            bank: Some(b.clone()),
                            objects: vec![k.id().to_hex()],
                            detail: "submitted transaction has no final decision".into(),
                        });
                    }
                }
            }
            self.reports.insert(TERMINATION, r);
        }

        // delivery
        {
            let mut r = CheckReport::new(EVENTUAL_DELIVERY);
            need_complete(&mut r);
            r.checked = self.sent.len() as u64;
            if let Some(m) = self.sent.difference(&self.delivered).next() {
                r.fail(Counterexample {
                    prefix: n,
                    bank: None,
                    objects: vec![m.to_string()],
                    detail: "sent message never delivered".into(),
                });
            }
            self.reports.insert(EVENTUAL_DELIVERY, r);
        }

        let licensed: Vec<String> = self.licensed.iter().map(|(k, v)| format!("{k}: {v}")).collect();
        if !licensed.is_empty() {
            self.report(REJECTION_RESTRICTION).notes.push(format!("licensed by {}", licensed.join(", ")));
        }
        let premise = self.premise();
        self.report(PROPER_ALWAYS).notes.push(premise);
        self.equivalence(&honest);

        let order = [
            AGREEMENT,
            POSITIVE_BALANCE,
            TERMINATION,
            REJECTION_RESTRICTION,
            PROPER_ALWAYS,
            EVENTUAL_DELIVERY,
            TRACE_INTEGRITY,
            ORACLE_EQUIVALENCE,
        ];
        order.iter().map(|n| self.reports.remove(n).expect("registered")).collect()
    }

    /// The honest-power assumption behind properness, judged on the
    /// subgraph of every node in the honest union.
    fn premise(&self) -> String {
        let dag = &self.dag;
        let union = &self.union;
        let in_union = |k: usize| union.get(k).copied().unwrap_or(false);
        let bad = equivocators(dag, &in_union);
        let good: BTreeSet<BankId> = self
            .trace
            .header
            .banks
            .iter()
            .filter_map(|b| hex::decode(&b.key).ok())
            .filter_map(|k| <[u8; 32]>::try_from(k).ok())
            .map(BankId)
            .filter(|b| !bad.contains(b))
            .collect();
        let tiered = self.trace.header.shared_power == "tiered";
        for &v in &self.union_order {
            let p = power(dag, &|k| k != v && dag.acks(v, k), tiered);
            let malicious = p.total - p.of(&good);
            if 3 * malicious > p.total {
                return format!(
                    "premise fails: malicious banks hold {malicious} of {} power in the subgraph of {}",
                    p.total,
                    dag.nodes[v].digest.short()
                );
            }
        }
        format!(
            "premise holds: at most a third of the power is malicious in all {} subgraphs ({} equivocating banks)",
            self.union_order.len(),
            bad.len()
        )
    }

    /// Naive balance of each honest final graph against the engine.
    fn equivalence(&mut self, honest: &[String]) {
        let scheme = Scheme::from_name(&self.trace.header.scheme).unwrap_or_default();
        let mut r = CheckReport::new(ORACLE_EQUIVALENCE);
        for b in honest {
            let v = &self.banks[b];
            if v.order.len() > self.cfg.max_nodes {
                r.notes.push(format!("{b}: skipped, {} nodes exceed the limit", v.order.len()));
                continue;
            }
            let mut g = Blockgraph::genesis(scheme, match &*self.nodes[0] {
                Node::Init(i) => i.clone(),
                _ => unreachable!("index 0 is Init"),
            });
            let mut ok = true;
            for &k in &v.order[1..] {
                let pos = self.nodes.iter().position(|n| n.digest() == self.dag.nodes[k].digest);
                match pos.map(|p| g.insert_node(self.nodes[p].clone())) {
                    Some(Ok(_)) => {}
                    _ => ok = false,
                }
            }
            r.checked += 1;
            let naive = naive_total_balance(&g, self.cfg.max_nodes);
            if !ok || naive.as_ref().ok() != Some(&total_balance(&g)) {
                r.fail(Counterexample {
                    prefix: self.trace.events.len() as u64,
                    bank: Some(b.clone()),
                    objects: vec![g.fingerprint().to_hex()],
                    detail: "naive balance differs from the engine".into(),
                });
            }
        }
        self.reports.insert(ORACLE_EQUIVALENCE, r);
    }
}
