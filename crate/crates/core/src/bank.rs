//! The deterministic state machine an honest bank runs.
//!
//! A bank reacts to user transactions and to nodes from other banks. After
//! every input it settles: it keeps issuing Update, Start, Close and Accept
//! nodes while it can, then ages the transactions it could not place.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use sha2::{Digest as _, Sha256};

use crate::balance::{total_balance, BalanceSheet};
use crate::bitset::BitSet;
use crate::codec;
use crate::crypto::{Digest, Keypair};
use crate::error::InsertError;
use crate::graph::{Blockgraph, Phase};
use crate::types::{BankId, InitNode, Node, NodeKind, NodeRef, Parent, Payload, Transaction, TxKey};
use crate::validity::{check_tx, Reason, Validator, Verdict};
use crate::view::View;
use crate::voting::{power_with, support_within, threshold_met, SharedPower};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BankConfig {
    /// Most transactions per Start.
    pub batch_max: usize,
    /// Failed re-evaluations before a transaction is rejected.
    pub patience: u32,
    pub shared: SharedPower,
    /// Panic when an own node fails self-validation. Byzantine personas run
    /// with this off and simply skip such nodes.
    pub strict: bool,
    #[doc(hidden)]
    pub mutant: Option<Mutant>,
}

/// Deliberate bugs for validating the property oracles.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutant {
    /// Rejects every user transaction on arrival.
    RejectEagerly,
    /// Silently drops user transactions whose digest starts with an even byte.
    DropSome,
}

impl Mutant {
    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "reject-eagerly" => Some(Mutant::RejectEagerly),
            "drop-some" => Some(Mutant::DropSome),
            _ => None,
        }
    }
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig {
            batch_max: 16,
            patience: 8,
            shared: SharedPower::Simple,
            strict: true,
            mutant: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    NewNode(Arc<Node>),
    RequestNodes(Vec<NodeRef>),
    NodesResponse(Vec<Arc<Node>>),
    UserTx(Transaction),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::NewNode(_) => "new-node",
            Message::RequestNodes(_) => "request-nodes",
            Message::NodesResponse(_) => "nodes-response",
            Message::UserTx(_) => "user-tx",
        }
    }

    /// Digests the message talks about, for trace records.
    pub fn digests(&self) -> Vec<Digest> {
        match self {
            Message::NewNode(n) => vec![n.digest()],
            Message::RequestNodes(r) => r.iter().map(|r| r.hash).collect(),
            Message::NodesResponse(ns) => ns.iter().map(|n| n.digest()).collect(),
            Message::UserTx(t) => vec![t.digest()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Recipient {
    Broadcast,
    Bank(BankId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub to: Recipient,
    pub msg: Message,
}

/// Why a transaction was rejected; each maps to a licensed condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cause {
    SeqGap,
    Conflict,
    InsufficientBalance,
}

impl Cause {
    pub fn name(self) -> &'static str {
        match self {
            Cause::SeqGap => "seq-gap",
            Cause::Conflict => "conflict",
            Cause::InsufficientBalance => "insufficient-balance",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "seq-gap" => Some(Cause::SeqGap),
            "conflict" => Some(Cause::Conflict),
            "insufficient-balance" => Some(Cause::InsufficientBalance),
            _ => None,
        }
    }

    fn of(reason: Reason) -> Cause {
        match reason {
            Reason::InsufficientBalance => Cause::InsufficientBalance,
            Reason::ConflictingSeq => Cause::Conflict,
            _ => Cause::SeqGap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    Pending { age: u32 },
    Accepted,
    Rejected(Cause),
}

impl Decision {
    pub fn is_terminal(self) -> bool {
        !matches!(self, Decision::Pending { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BankEvent {
    NodeCreated(Arc<Node>),
    NodeInserted(Digest),
    Quarantined { digest: Digest, missing: usize },
    Discarded { digest: Digest, reason: Reason },
    TxAccepted(TxKey),
    TxRejected(TxKey, Cause),
    /// A rejected transaction became valid again and re-entered the mempool.
    TxRetried(TxKey),
    Warning(String),
}

#[derive(Debug, Clone)]
struct Held {
    node: Arc<Node>,
    from: Option<BankId>,
    missing: BTreeSet<Digest>,
}

#[derive(Debug, Clone)]
pub struct BankState {
    id: BankId,
    keys: Keypair,
    cfg: BankConfig,
    graph: Blockgraph,
    validator: Validator,
    head: Option<u32>,
    max_starts: Option<u64>,
    hold: Option<(NodeKind, u64)>,
    starts_made: u64,
    mempool: VecDeque<Transaction>,
    in_block: Vec<Transaction>,
    decisions: BTreeMap<TxKey, Decision>,
    retry: BTreeMap<TxKey, Transaction>,
    quarantine: BTreeMap<Digest, Held>,
    requested: BTreeSet<(Digest, Option<BankId>)>,
    discarded: BTreeMap<Digest, Reason>,
    accepts_seen: usize,
    stalled: bool,
    outbox: Vec<Outgoing>,
    events: Vec<BankEvent>,
}

impl BankState {
    pub fn new(keys: Keypair, init: InitNode, cfg: BankConfig) -> Self {
        let graph = Blockgraph::genesis(keys.scheme(), init.clone());
        BankState {
            id: BankId(keys.public()),
            validator: Validator::new(init, cfg.shared),
            keys,
            cfg,
            graph,
            head: None,
            max_starts: None,
            hold: None,
            starts_made: 0,
            mempool: VecDeque::new(),
            in_block: Vec::new(),
            decisions: BTreeMap::new(),
            retry: BTreeMap::new(),
            quarantine: BTreeMap::new(),
            requested: BTreeSet::new(),
            discarded: BTreeMap::new(),
            accepts_seen: 0,
            stalled: false,
            outbox: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn id(&self) -> BankId {
        self.id
    }

    pub fn graph(&self) -> &Blockgraph {
        &self.graph
    }

    pub fn config(&self) -> &BankConfig {
        &self.cfg
    }

    pub fn set_strict(&mut self, strict: bool) {
        self.cfg.strict = strict;
    }

    /// Caps how many Start nodes this bank will ever issue.
    pub fn set_max_starts(&mut self, max: Option<u64>) {
        self.max_starts = max;
    }

    /// Withholds the node of `kind` that would finish phase `block`.
    pub fn set_hold(&mut self, hold: Option<(NodeKind, u64)>) {
        self.hold = hold;
    }

    fn held(&self, kind: NodeKind) -> bool {
        self.hold == Some((kind, self.starts_made))
    }

    /// Whether the current block's Close or Accept has its quorum now.
    pub fn quorum_ready(&self) -> bool {
        self.phase_target().is_some_and(|t| self.quorum_on_head(t))
    }

    /// Appends an Update with no references, so that otherwise identical
    /// forks of one chain get distinct nodes.
    pub fn pad(&mut self) -> bool {
        self.emit(Payload::Update(Vec::new()))
    }

    pub fn starts_made(&self) -> u64 {
        self.starts_made
    }

    pub fn head(&self) -> Option<&Arc<Node>> {
        self.head.map(|i| &self.graph.entry(i).node)
    }

    /// Phase of the bank's own chain.
    pub fn phase(&self) -> Phase {
        self.head.map_or(Phase::Idle, |i| self.graph.entry(i).phase)
    }

    pub fn decisions(&self) -> &BTreeMap<TxKey, Decision> {
        &self.decisions
    }

    pub fn decision(&self, key: &TxKey) -> Option<Decision> {
        self.decisions.get(key).copied()
    }

    pub fn mempool(&self) -> impl Iterator<Item = &Transaction> {
        self.mempool.iter()
    }

    pub fn quarantined(&self) -> usize {
        self.quarantine.len()
    }

    pub fn discarded(&self) -> &BTreeMap<Digest, Reason> {
        &self.discarded
    }

    pub fn take_outbox(&mut self) -> Vec<Outgoing> {
        std::mem::take(&mut self.outbox)
    }

    pub fn take_events(&mut self) -> Vec<BankEvent> {
        std::mem::take(&mut self.events)
    }

    /// True while some queued transaction is invalid and still aging: the
    /// bank needs another activation to make progress on it.
    pub fn wants_wake(&self) -> bool {
        self.stalled
    }

    /// Digest of everything that influences future behavior.
    pub fn fingerprint(&self) -> Digest {
        let mut h = Sha256::new();
        h.update(self.graph.fingerprint().0);
        for (k, d) in &self.decisions {
            h.update(k.id().0);
            h.update(format!("{d:?}").as_bytes());
        }
        for t in &self.mempool {
            h.update(t.digest().0);
        }
        for d in self.quarantine.keys() {
            h.update(d.0);
        }
        for d in self.discarded.keys() {
            h.update(d.0);
        }
        h.update([self.stalled as u8]);
        Digest(h.finalize().into())
    }

    pub fn sheet(&self) -> BalanceSheet {
        total_balance(&self.graph)
    }

    /// One input followed by settling.
    pub fn handle(&mut self, from: Option<BankId>, msg: Message) {
        self.on_message(from, msg);
        self.activate();
    }

    /// Settles, ages pending transactions once, settles again.
    pub fn activate(&mut self) {
        self.settle();
        self.age();
        self.settle();
    }

    pub fn on_user_transaction(&mut self, t: Transaction) {
        if !t.verify(self.graph.scheme()) {
            self.events
                .push(BankEvent::Warning(format!("dropped badly signed tx {}", t.digest().short())));
            return;
        }
        let key = t.key();
        if self.decisions.contains_key(&key) {
            return;
        }
        match self.cfg.mutant {
            Some(Mutant::RejectEagerly) => return self.decide(key, Decision::Rejected(Cause::InsufficientBalance)),
            Some(Mutant::DropSome) if t.digest().0[0].is_multiple_of(2) => return,
            _ => {}
        }
        self.decisions.insert(key, Decision::Pending { age: 0 });
        self.mempool.push_back(t);
    }

    pub fn on_message(&mut self, from: Option<BankId>, msg: Message) {
        match msg {
            Message::UserTx(t) => self.on_user_transaction(t),
            Message::NewNode(n) => self.receive(n, from),
            Message::NodesResponse(ns) => {
                for n in ns {
                    self.receive(n, from);
                }
            }
            Message::RequestNodes(refs) => {
                let found: Vec<Arc<Node>> = refs
                    .iter()
                    .filter_map(|r| self.graph.get(&r.hash).cloned())
                    .collect();
                if let (Some(peer), false) = (from, found.is_empty()) {
                    self.outbox.push(Outgoing {
                        to: Recipient::Bank(peer),
                        msg: Message::NodesResponse(found),
                    });
                }
            }
        }
    }

    fn receive(&mut self, node: Arc<Node>, from: Option<BankId>) {
        let d = node.digest();
        if self.graph.contains(&d) || self.discarded.contains_key(&d) || self.quarantine.contains_key(&d) {
            return;
        }
        let mut work = VecDeque::from([(node, from)]);
        while let Some((node, from)) = work.pop_front() {
            let d = node.digest();
            if self.graph.contains(&d) || self.discarded.contains_key(&d) {
                continue;
            }
            match self.graph.prepare(&node) {
                Err(InsertError::Duplicate(_)) => {}
                Err(InsertError::MissingAncestors(refs)) => {
                    if refs.iter().any(|r| self.discarded.contains_key(&r.hash)) {
                        self.discard(d, Reason::BadSubgraph);
                        continue;
                    }
                    let missing: BTreeSet<Digest> = refs.iter().map(|r| r.hash).collect();
                    let ask: Vec<NodeRef> = refs
                        .iter()
                        .filter(|r| !self.quarantine.contains_key(&r.hash))
                        .filter(|r| self.requested.insert((r.hash, from)))
                        .copied()
                        .collect();
                    if let (Some(peer), false) = (from, ask.is_empty()) {
                        self.outbox.push(Outgoing {
                            to: Recipient::Bank(peer),
                            msg: Message::RequestNodes(ask),
                        });
                    }
                    self.events.push(BankEvent::Quarantined {
                        digest: d,
                        missing: missing.len(),
                    });
                    self.quarantine.insert(d, Held { node, from, missing });
                }
                Err(InsertError::Grammar(_)) => self.discard(d, Reason::Grammar),
                Err(InsertError::BadSignature) => self.discard(d, Reason::BadSignature),
                Ok(_) => match self.validator.admissible_extension(&self.graph, &node) {
                    Ok(Verdict::Valid) => {
                        let p = self.graph.prepare(&node).expect("prepared above");
                        self.graph.commit(node, p);
                        self.events.push(BankEvent::NodeInserted(d));
                        self.quarantine.remove(&d);
                        let ready: Vec<Digest> = self
                            .quarantine
                            .iter_mut()
                            .filter_map(|(k, h)| (h.missing.remove(&d) && h.missing.is_empty()).then_some(*k))
                            .collect();
                        for k in ready {
                            let h = self.quarantine.remove(&k).expect("listed");
                            work.push_back((h.node, h.from));
                        }
                    }
                    Ok(Verdict::Invalid(r)) => self.discard(d, r),
                    Err(e) => unreachable!("prepare succeeded, admissibility cannot fail: {e}"),
                },
            }
        }
    }

    fn discard(&mut self, d: Digest, reason: Reason) {
        let mut stack = vec![(d, reason)];
        while let Some((d, reason)) = stack.pop() {
            if self.discarded.contains_key(&d) {
                continue;
            }
            self.quarantine.remove(&d);
            self.discarded.insert(d, reason);
            self.events.push(BankEvent::Discarded { digest: d, reason });
            for (k, h) in &self.quarantine {
                if h.missing.contains(&d) {
                    stack.push((*k, Reason::BadSubgraph));
                }
            }
        }
    }

    /// Runs steps until none makes progress.
    pub fn settle(&mut self) {
        while self.step() {}
    }

    /// One round of the protocol. Returns true if anything changed.
    pub fn step(&mut self) -> bool {
        let created = self.try_update() || self.try_start() || self.try_close() || self.try_accept();
        let decided = self.process_accepts();
        created || decided
    }

    fn own_bits(&self) -> BitSet {
        let mut bits = match self.head {
            Some(h) => {
                let mut b = self.graph.entry(h).ancestors.clone();
                b.insert(h);
                b
            }
            None => BitSet::default(),
        };
        bits.insert(0);
        bits
    }

    fn head_view(&self) -> View<'_> {
        View::from_bits(&self.graph, self.own_bits())
    }

    /// Node the current block phase is waiting on: the Start while open,
    /// the Close once closed.
    fn phase_target(&self) -> Option<u32> {
        match self.phase() {
            Phase::Idle => None,
            Phase::Open { start } => Some(start),
            Phase::Closed { close, .. } => Some(close),
        }
    }

    fn try_update(&mut self) -> bool {
        let seen = self.own_bits();
        let g = &self.graph;
        let fresh: Vec<u32> = (1..g.len() as u32)
            .filter(|&i| !seen.contains(i) && g.entry(i).bank() != Some(self.id))
            .collect();
        if fresh.is_empty() {
            return false;
        }
        let substantive = fresh.iter().any(|&i| g.entry(i).kind() != NodeKind::Update);
        let refs: Vec<u32> = fresh
            .iter()
            .copied()
            .filter(|&i| !fresh.iter().any(|&j| j != i && g.entry(j).ancestors.contains(i)))
            .collect();
        let useful = substantive
            || self.phase_target().is_some_and(|target| {
                let before = support_within(&View::from_bits(g, seen.clone()), target);
                let mut wider = seen.clone();
                for &r in &refs {
                    wider.insert(r);
                    wider.union_with(&g.entry(r).ancestors);
                }
                let after = support_within(&View::from_bits(g, wider), target);
                after.len() > before.len()
            });
        if !useful {
            return false;
        }
        let malicious = g.malicious_within(Some(&seen));
        let mut refs: Vec<NodeRef> = refs.into_iter().map(|i| g.node_ref(i)).collect();
        refs.sort();
        for r in refs.iter().filter(|r| malicious.contains(&r.bank)) {
            self.events.push(BankEvent::Warning(format!(
                "update references a new node of known-malicious bank {}",
                r.bank.short()
            )));
        }
        self.emit(Payload::Update(refs))
    }

    fn try_start(&mut self) -> bool {
        if self.phase() != Phase::Idle || self.mempool.is_empty() {
            return false;
        }
        if self.max_starts.is_some_and(|m| self.starts_made >= m) {
            return false;
        }
        let view = self.head_view();
        let sheet = total_balance(view.clone());
        let mut picked: Vec<Transaction> = Vec::new();
        for t in &self.mempool {
            if picked.len() >= self.cfg.batch_max {
                break;
            }
            if check_tx(&view, &sheet, t, self.id, &picked).is_valid() {
                picked.push(t.clone());
            }
        }
        if picked.is_empty() {
            return false;
        }
        if !self.emit(Payload::Start(picked.clone())) {
            return false;
        }
        self.starts_made += 1;
        let keys: BTreeSet<TxKey> = picked.iter().map(Transaction::key).collect();
        self.mempool.retain(|t| !keys.contains(&t.key()));
        self.in_block = picked;
        true
    }

    fn quorum_on_head(&self, target: u32) -> bool {
        let view = self.head_view();
        let sheet = total_balance(view.clone());
        match power_with(&view, &sheet, self.cfg.shared) {
            Ok(dist) => threshold_met(&dist, &support_within(&view, target)),
            Err(_) => false,
        }
    }

    fn try_close(&mut self) -> bool {
        match self.phase() {
            Phase::Open { start } if !self.held(NodeKind::Close) && self.quorum_on_head(start) => {
                self.emit(Payload::Close)
            }
            _ => false,
        }
    }

    fn try_accept(&mut self) -> bool {
        match self.phase() {
            Phase::Closed { close, .. } if !self.held(NodeKind::Accept) && self.quorum_on_head(close) => {
                self.emit(Payload::Accept)
            }
            _ => false,
        }
    }

    /// Signs, self-checks, stores and broadcasts the next own node.
    fn emit(&mut self, payload: Payload) -> bool {
        let (seq, parent) = match self.head {
            None => (1, Parent::Init(self.graph.init_digest())),
            Some(h) => {
                let r = self.graph.node_ref(h);
                (r.seq + 1, Parent::Node(r))
            }
        };
        let node = Arc::new(Node::signed(&self.keys, seq, parent, payload));
        let verdict = self
            .validator
            .admissible_extension(&self.graph, &node)
            .expect("own node references only stored nodes");
        if verdict != Verdict::Valid {
            if verdict == Verdict::Invalid(Reason::Improper) {
                // waiting for more acknowledgments may repair this
                self.events
                    .push(BankEvent::Warning("withheld a node that would break properness".into()));
                return false;
            }
            assert!(
                !self.cfg.strict,
                "own {} node failed self-validation: {verdict:?}",
                node.kind().name()
            );
            return false;
        }
        let p = self.graph.prepare(&node).expect("validated");
        let d = self.graph.commit(node.clone(), p);
        self.head = Some(self.graph.idx(&d).expect("just stored"));
        self.events.push(BankEvent::NodeCreated(node.clone()));
        self.outbox.push(Outgoing {
            to: Recipient::Broadcast,
            msg: Message::NewNode(node),
        });
        true
    }

    /// Records outcomes of Accept nodes not yet processed.
    fn process_accepts(&mut self) -> bool {
        let fresh: Vec<u32> = self.graph.accepts[self.accepts_seen..].to_vec();
        if fresh.is_empty() {
            return false;
        }
        self.accepts_seen = self.graph.accepts.len();
        let sheet = total_balance(&self.graph);
        for a in fresh {
            let Some(start) = self.graph.start_of(a) else {
                continue;
            };
            let keys: Vec<TxKey> = self
                .graph
                .entry(start)
                .node
                .transactions()
                .iter()
                .map(Transaction::key)
                .collect();
            for key in keys {
                if sheet.applied.contains(&key) {
                    self.decide(key, Decision::Accepted);
                } else {
                    self.decide(key, Decision::Rejected(Cause::Conflict));
                }
            }
        }
        self.recheck_retry(&sheet);
        true
    }

    fn decide(&mut self, key: TxKey, d: Decision) {
        let prev = self.decisions.get(&key).copied();
        let allowed = match (prev, d) {
            (Some(Decision::Accepted), _) => false,
            (Some(Decision::Rejected(a)), Decision::Rejected(b)) => a != b,
            _ => true,
        };
        if !allowed {
            return;
        }
        self.decisions.insert(key, d);
        match d {
            Decision::Accepted => self.events.push(BankEvent::TxAccepted(key)),
            Decision::Rejected(c) => self.events.push(BankEvent::TxRejected(key, c)),
            Decision::Pending { .. } => {}
        }
        if d.is_terminal() {
            self.mempool.retain(|t| t.key() != key);
            self.in_block.retain(|t| t.key() != key);
            if d == Decision::Accepted || d == Decision::Rejected(Cause::Conflict) {
                self.retry.remove(&key);
            }
        }
    }

    fn recheck_retry(&mut self, sheet: &BalanceSheet) {
        let view = self.graph.view();
        let mut back = Vec::new();
        let mut recause = Vec::new();
        for t in self.retry.values() {
            match check_tx(&view, sheet, t, self.id, &[]) {
                Verdict::Invalid(r) => recause.push((t.key(), Cause::of(r))),
                _ => back.push(t.clone()),
            }
        }
        for (key, cause) in recause {
            if cause != Cause::Conflict {
                self.decide(key, Decision::Rejected(cause));
            }
        }
        for t in back {
            let key = t.key();
            self.retry.remove(&key);
            self.decisions.insert(key, Decision::Pending { age: 0 });
            self.events.push(BankEvent::TxRetried(key));
            self.mempool.push_back(t);
        }
    }

    /// Re-evaluates queued transactions against the whole graph once.
    fn age(&mut self) {
        let sheet = total_balance(&self.graph);
        let view = self.graph.view();
        let mut verdicts = Vec::new();
        for t in &self.mempool {
            let key = t.key();
            let conflict_applied = sheet
                .applied
                .iter()
                .any(|k| k.source == key.source && k.seq == key.seq && *k != key);
            let v = if conflict_applied {
                Verdict::Invalid(Reason::ConflictingSeq)
            } else {
                check_tx(&view, &sheet, t, self.id, &[])
            };
            verdicts.push((t.clone(), v, conflict_applied));
        }
        self.stalled = false;
        for (t, v, immediate) in verdicts {
            let key = t.key();
            let Some(Decision::Pending { age }) = self.decisions.get(&key).copied() else {
                continue;
            };
            let Verdict::Invalid(reason) = v else {
                self.decisions.insert(key, Decision::Pending { age: 0 });
                continue;
            };
            let age = age + 1;
            if immediate || age >= self.cfg.patience {
                let cause = Cause::of(reason);
                self.decide(key, Decision::Rejected(cause));
                if cause != Cause::Conflict {
                    self.retry.insert(key, t);
                }
            } else {
                self.decisions.insert(key, Decision::Pending { age });
                self.stalled = true;
            }
        }
    }

    /// Transactions in the bank's own open block.
    pub fn in_block(&self) -> &[Transaction] {
        &self.in_block
    }
}

/// Hex of a node's canonical encoding, as carried in traces.
pub fn node_hex(n: &Node) -> String {
    hex::encode(codec::encode_node(n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{bank_key, World};
    use crate::crypto::Scheme;

    struct Net {
        w: World,
        banks: Vec<BankState>,
    }

    impl Net {
        fn new(w: World, names: &[&str]) -> Net {
            let banks = names
                .iter()
                .map(|n| BankState::new(bank_key(Scheme::Test, n), w.init.clone(), BankConfig::default()))
                .collect();
            Net { w, banks }
        }

        /// Delivers everything in FIFO order until quiet.
        fn run(&mut self) {
            let mut queue: VecDeque<(usize, Option<BankId>, Message)> = VecDeque::new();
            loop {
                for i in 0..self.banks.len() {
                    let from = self.banks[i].id();
                    for o in self.banks[i].take_outbox() {
                        for j in 0..self.banks.len() {
                            let hit = match o.to {
                                Recipient::Broadcast => j != i,
                                Recipient::Bank(b) => self.banks[j].id() == b,
                            };
                            if hit {
                                queue.push_back((j, Some(from), o.msg.clone()));
                            }
                        }
                    }
                }
                if let Some((j, from, m)) = queue.pop_front() {
                    self.banks[j].handle(from, m);
                    continue;
                }
                let sleepy: Vec<usize> = (0..self.banks.len()).filter(|&i| self.banks[i].wants_wake()).collect();
                if sleepy.is_empty() {
                    break;
                }
                for i in sleepy {
                    self.banks[i].activate();
                }
            }
        }

        fn submit(&mut self, bank: usize, t: Transaction) {
            self.banks[bank].handle(None, Message::UserTx(t));
        }
    }

    #[test]
    fn two_bank_round_trip_accepts_at_both() {
        let w = World::new(&[("B1", &[("u1", 60)]), ("B2", &[("u2", 40)])]);
        let mut net = Net::new(w, &["B1", "B2"]);
        let t = net.w.tx("u1@B1", "u2@B2", 20, 1);
        net.submit(0, t.clone());
        assert_eq!(net.banks[0].graph().len(), 2, "start created immediately");
        net.run();
        for b in &net.banks {
            assert_eq!(b.decision(&t.key()), Some(Decision::Accepted));
            assert_eq!(b.sheet().balance(&net.w.account("u2@B2")), 60);
        }
        let kinds: Vec<NodeKind> = net.banks[0]
            .graph()
            .chain(&net.w.bank("B1"))
            .iter()
            .map(|n| n.kind())
            .collect();
        assert_eq!(
            kinds,
            [NodeKind::Start, NodeKind::Update, NodeKind::Close, NodeKind::Update, NodeKind::Accept]
        );
    }

    #[test]
    fn lone_minority_bank_never_closes() {
        let w = World::new(&[("B1", &[("u1", 60)]), ("B2", &[("u2", 40)])]);
        let mut b = BankState::new(bank_key(Scheme::Test, "B1"), w.init.clone(), BankConfig::default());
        b.handle(None, Message::UserTx(w.tx("u1@B1", "u2@B2", 20, 1)));
        for _ in 0..20 {
            b.activate();
        }
        assert_eq!(b.phase(), Phase::Open { start: 1 });
        assert!(matches!(
            b.decision(&w.tx("u1@B1", "u2@B2", 20, 1).key()),
            Some(Decision::Pending { .. })
        ));
    }

    #[test]
    fn duplicate_user_tx_is_ignored() {
        let w = World::new(&[("B1", &[("u1", 60)]), ("B2", &[("u2", 40)])]);
        let mut b = BankState::new(bank_key(Scheme::Test, "B1"), w.init.clone(), BankConfig::default());
        let t = w.tx("u1@B1", "u2@B2", 5, 2);
        b.on_user_transaction(t.clone());
        b.on_user_transaction(t);
        assert_eq!(b.mempool().count(), 1);
    }

    #[test]
    fn gap_is_rejected_after_patience() {
        let w = World::new(&[("B1", &[("u1", 60)]), ("B2", &[("u2", 40)])]);
        let mut b = BankState::new(bank_key(Scheme::Test, "B1"), w.init.clone(), BankConfig::default());
        let t = w.tx("u1@B1", "u2@B2", 5, 5);
        b.handle(None, Message::UserTx(t.clone()));
        let mut n = 1;
        while b.wants_wake() {
            b.activate();
            n += 1;
        }
        assert_eq!(n, 8);
        assert_eq!(b.decision(&t.key()), Some(Decision::Rejected(Cause::SeqGap)));
    }

    #[test]
    fn overdraft_is_rejected_for_balance() {
        let w = World::new(&[("B1", &[("u1", 40)]), ("B2", &[("u2", 60)])]);
        let mut b = BankState::new(bank_key(Scheme::Test, "B1"), w.init.clone(), BankConfig::default());
        let t = w.tx("u1@B1", "u2@B2", 50, 1);
        b.handle(None, Message::UserTx(t.clone()));
        while b.wants_wake() {
            b.activate();
        }
        assert_eq!(
            b.decision(&t.key()),
            Some(Decision::Rejected(Cause::InsufficientBalance))
        );
    }

    #[test]
    fn missing_parent_triggers_request() {
        let w = World::new(&[("B1", &[("u1", 60)]), ("B2", &[("u2", 40)])]);
        let mut net = Net::new(w, &["B1", "B2"]);
        net.submit(0, net.w.tx("u1@B1", "u2@B2", 20, 1));
        let out = net.banks[0].take_outbox();
        let Message::NewNode(start) = &out[0].msg else {
            panic!("start is broadcast first")
        };
        let child = Arc::new(Node::signed(
            &bank_key(Scheme::Test, "B1"),
            2,
            Parent::Node(start.reference().unwrap()),
            Payload::Update(vec![]),
        ));
        let b1 = net.banks[0].id();
        let b2 = &mut net.banks[1];
        b2.handle(Some(b1), Message::NewNode(child.clone()));
        assert_eq!(b2.quarantined(), 1);
        let asks = b2.take_outbox();
        assert!(asks.iter().any(|o| o.to == Recipient::Bank(b1)
            && matches!(&o.msg, Message::RequestNodes(r) if r[0].hash == start.digest())));
        b2.handle(Some(b1), Message::NodesResponse(vec![start.clone()]));
        assert_eq!(b2.quarantined(), 0);
        assert!(b2.graph().contains(&start.digest()));
        assert!(b2.graph().contains(&child.digest()));
    }

    #[test]
    fn invalid_foreign_node_is_discarded_with_descendants() {
        let w = World::new(&[("B1", &[("u1", 60)]), ("B2", &[("u2", 40)])]);
        let key = bank_key(Scheme::Test, "B1");
        let mut b2 = BankState::new(bank_key(Scheme::Test, "B2"), w.init.clone(), BankConfig::default());
        let init = b2.graph().init_digest();
        let bad = Arc::new(Node::signed(
            &key,
            1,
            Parent::Init(init),
            Payload::Start(vec![w.tx("u1@B1", "u2@B2", 999, 1)]),
        ));
        let child = Arc::new(Node::signed(
            &key,
            2,
            Parent::Node(bad.reference().unwrap()),
            Payload::Update(vec![]),
        ));
        b2.handle(Some(BankId(key.public())), Message::NewNode(child.clone()));
        b2.handle(Some(BankId(key.public())), Message::NewNode(bad.clone()));
        assert_eq!(
            b2.discarded().get(&bad.digest()),
            Some(&Reason::InsufficientBalance)
        );
        assert_eq!(b2.discarded().get(&child.digest()), Some(&Reason::BadSubgraph));
        assert_eq!(b2.graph().len(), 1);
    }
}
