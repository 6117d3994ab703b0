//! Node validity and the proper-graph predicate.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::balance::{total_balance, BalanceSheet};
use crate::bitset::BitSet;
use crate::crypto::Digest;
use crate::error::{GraphError, InsertError};
use crate::graph::{Blockgraph, Phase};
use crate::types::{Balance, BankId, InitNode, Node, NodeKind, Payload, Transaction};
use crate::view::View;
use crate::voting::{power_with, support_within, threshold_met, SharedPower};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Reason {
    BadSubgraph,
    SeqGap,
    ConflictingSeq,
    InsufficientBalance,
    ThresholdNotMet,
    SelfMaliceEvident,
    RedundantReference,
    Grammar,
    BadSignature,
    InitMismatch,
    /// Uncertain transactions of one user with different seqs; only possible
    /// on a graph that already holds an invalid Start.
    UncertainSeqMismatch,
    /// Valid on its own but breaks properness of the receiving graph.
    Improper,
}

impl Reason {
    pub const ALL: [Reason; 12] = [
        Reason::BadSubgraph,
        Reason::SeqGap,
        Reason::ConflictingSeq,
        Reason::InsufficientBalance,
        Reason::ThresholdNotMet,
        Reason::SelfMaliceEvident,
        Reason::RedundantReference,
        Reason::Grammar,
        Reason::BadSignature,
        Reason::InitMismatch,
        Reason::UncertainSeqMismatch,
        Reason::Improper,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Reason::BadSubgraph => "bad-subgraph",
            Reason::SeqGap => "seq-gap",
            Reason::ConflictingSeq => "conflicting-seq",
            Reason::InsufficientBalance => "insufficient-balance",
            Reason::ThresholdNotMet => "threshold-not-met",
            Reason::SelfMaliceEvident => "self-malice-evident",
            Reason::RedundantReference => "redundant-reference",
            Reason::Grammar => "grammar",
            Reason::BadSignature => "bad-signature",
            Reason::InitMismatch => "init-mismatch",
            Reason::UncertainSeqMismatch => "uncertain-seq-mismatch",
            Reason::Improper => "improper",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == s)
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Valid,
    Invalid(Reason),
}

impl Verdict {
    pub fn is_valid(self) -> bool {
        self == Verdict::Valid
    }

    pub fn reason(self) -> Option<Reason> {
        match self {
            Verdict::Valid => None,
            Verdict::Invalid(r) => Some(r),
        }
    }
}

/// Validity of `t` as a member of a Start issued by `issuer` whose subgraph
/// is `view`.
pub fn validate_start_tx<'a>(view: impl Into<View<'a>>, t: &Transaction, issuer: BankId) -> Verdict {
    let view = view.into();
    let sheet = total_balance(view.clone());
    check_tx(&view, &sheet, t, issuer, &[])
}

/// `prior` holds the transactions listed before `t` in the same Start.
pub(crate) fn check_tx(
    view: &View<'_>,
    sheet: &BalanceSheet,
    t: &Transaction,
    issuer: BankId,
    prior: &[Transaction],
) -> Verdict {
    let g = view.g;
    let key = t.key();
    let applied = sheet.applied_of(&t.source);
    let n = applied.len() as u64;
    let covers = applied
        .iter()
        .enumerate()
        .all(|(i, (seq, keys))| *seq == i as u64 + 1 && keys.len() == 1);
    if !covers || t.seq != n + 1 {
        return Verdict::Invalid(Reason::SeqGap);
    }
    if prior.iter().any(|p| p.source == t.source && p.seq == t.seq) {
        return Verdict::Invalid(Reason::ConflictingSeq);
    }
    if let Some(sites) = g.tx_index.get(&(t.source, t.seq)) {
        for s in sites.iter().filter(|s| view.contains(s.start)) {
            if s.key != key {
                return Verdict::Invalid(Reason::ConflictingSeq);
            }
            let start = g.entry(s.start);
            let open = !g
                .accepts_of_start
                .get(&s.start)
                .is_some_and(|acc| acc.iter().any(|&a| view.contains(a)));
            if start.bank() == Some(issuer) || !open {
                return Verdict::Invalid(Reason::ConflictingSeq);
            }
        }
    }
    let spent: Balance = prior
        .iter()
        .filter(|p| p.source == t.source)
        .map(|p| p.amount.0 as Balance)
        .sum();
    if sheet.balance(&t.source) - spent < t.amount.0 as Balance {
        return Verdict::Invalid(Reason::InsufficientBalance);
    }
    Verdict::Valid
}

/// Memoizing validity judge. Verdicts depend only on a node's representing
/// graph, so one cache serves every graph that contains the node.
#[derive(Debug, Clone)]
pub struct Validator {
    init: InitNode,
    mode: SharedPower,
    memo: HashMap<Digest, Verdict>,
}

impl Validator {
    pub fn new(init: InitNode, mode: SharedPower) -> Self {
        Validator {
            init,
            mode,
            memo: HashMap::new(),
        }
    }

    pub fn mode(&self) -> SharedPower {
        self.mode
    }

    pub fn cached(&self, d: &Digest) -> Option<Verdict> {
        self.memo.get(d).copied()
    }

    /// Verdict for a node already stored in `g`.
    pub fn validate(&mut self, g: &Blockgraph, d: &Digest) -> Result<Verdict, GraphError> {
        let i = g.idx(d)?;
        Ok(self.judge_index(g, i))
    }

    /// True iff every node of `g` is valid.
    pub fn graph_is_valid(&mut self, g: &Blockgraph) -> bool {
        (0..g.len() as u32).all(|i| self.judge_index(g, i).is_valid())
    }

    fn judge_index(&mut self, g: &Blockgraph, i: u32) -> Verdict {
        let d = g.entry(i).digest;
        if let Some(v) = self.memo.get(&d) {
            return *v;
        }
        // ancestors ascend in insertion order, which is topological
        let pending: Vec<u32> = g
            .entry(i)
            .ancestors
            .iter()
            .filter(|&a| !self.memo.contains_key(&g.entry(a).digest))
            .collect();
        for a in pending.into_iter().chain([i]) {
            let e = g.entry(a);
            let parent_phase = e.parent.map(|p| g.entry(p).phase);
            let v = self.judge(g, &e.node, &e.edges, &e.ancestors, parent_phase);
            self.memo.insert(e.digest, v);
        }
        self.memo[&d]
    }

    /// Verdict for a node that is not yet in `g`. Missing ancestors are a
    /// sync condition rather than a verdict and come back as `Err`.
    pub fn validate_candidate(&mut self, g: &Blockgraph, node: &Node) -> Result<Verdict, InsertError> {
        let d = node.digest();
        if let Some(v) = self.memo.get(&d) {
            return Ok(*v);
        }
        if let Ok(i) = g.idx(&d) {
            return Ok(self.judge_index(g, i));
        }
        let p = match g.prepare(node) {
            Ok(p) => p,
            Err(InsertError::Grammar(_)) => return Ok(self.remember(d, Verdict::Invalid(Reason::Grammar))),
            Err(InsertError::BadSignature) => {
                return Ok(self.remember(d, Verdict::Invalid(Reason::BadSignature)))
            }
            Err(e) => return Err(e),
        };
        for &e in &p.edges {
            self.judge_index(g, e);
        }
        let parent_phase = p.parent.map(|x| g.entry(x).phase);
        let v = self.judge(g, node, &p.edges, &p.ancestors, parent_phase);
        Ok(self.remember(d, v))
    }

    fn remember(&mut self, d: Digest, v: Verdict) -> Verdict {
        self.memo.insert(d, v);
        v
    }

    /// Judges a node given its direct edges (already judged) and ancestors.
    fn judge(
        &self,
        g: &Blockgraph,
        node: &Node,
        edges: &[u32],
        ancestors: &BitSet,
        parent_phase: Option<Phase>,
    ) -> Verdict {
        let c = match node {
            Node::Init(i) => {
                return if *i == self.init {
                    Verdict::Valid
                } else {
                    Verdict::Invalid(Reason::InitMismatch)
                };
            }
            Node::Chain(c) => c,
        };
        if edges
            .iter()
            .any(|&e| self.memo.get(&g.entry(e).digest) != Some(&Verdict::Valid))
        {
            return Verdict::Invalid(Reason::BadSubgraph);
        }
        let mut scope = ancestors.clone();
        scope.insert(0);
        let view = View::from_bits(g, scope);
        match &c.payload {
            Payload::Update(refs) => {
                if g.malicious_within(view.bits()).contains(&c.bank) {
                    return Verdict::Invalid(Reason::SelfMaliceEvident);
                }
                let parent = edges[0];
                let mut seen = BTreeSet::new();
                for &r in &edges[1..] {
                    if !seen.insert(r) || g.acks(parent, r) {
                        return Verdict::Invalid(Reason::RedundantReference);
                    }
                }
                debug_assert_eq!(refs.len(), edges.len() - 1);
                Verdict::Valid
            }
            Payload::Start(txs) => {
                let sheet = total_balance(view.clone());
                for (k, t) in txs.iter().enumerate() {
                    let v = check_tx(&view, &sheet, t, c.bank, &txs[..k]);
                    if !v.is_valid() {
                        return v;
                    }
                }
                Verdict::Valid
            }
            Payload::Close | Payload::Accept => {
                let target = match (&c.payload, parent_phase) {
                    (Payload::Close, Some(Phase::Open { start })) => start,
                    (Payload::Accept, Some(Phase::Closed { close, .. })) => close,
                    _ => return Verdict::Invalid(Reason::Grammar),
                };
                self.quorum(&view, target)
            }
        }
    }

    fn quorum(&self, view: &View<'_>, target: u32) -> Verdict {
        let sheet = total_balance(view.clone());
        let Ok(dist) = power_with(view, &sheet, self.mode) else {
            return Verdict::Invalid(Reason::UncertainSeqMismatch);
        };
        // the terminal itself acknowledges the target, and its owner already
        // supports through the target's own chain
        if threshold_met(&dist, &support_within(view, target)) {
            Verdict::Valid
        } else {
            Verdict::Invalid(Reason::ThresholdNotMet)
        }
    }

    /// Valid, and the graph stays proper once the node is added.
    pub fn admissible_extension(&mut self, g: &Blockgraph, node: &Node) -> Result<Verdict, InsertError> {
        if g.contains(&node.digest()) || matches!(node, Node::Init(_)) {
            return Ok(Verdict::Invalid(Reason::Grammar));
        }
        let v = self.validate_candidate(g, node)?;
        if !v.is_valid() {
            return Ok(v);
        }
        let p = g.prepare(node)?;
        if proper_with(g, node.kind(), &p.ancestors, p.parent, p.phase) {
            Ok(Verdict::Valid)
        } else {
            Ok(Verdict::Invalid(Reason::Improper))
        }
    }
}

/// Every pair of Closes links through a Start, every pair of Accepts through
/// a Close.
pub fn is_proper<'a>(view: impl Into<View<'a>>) -> bool {
    let view = view.into();
    let g = view.g;
    let closes = view.select(&g.closes);
    let accepts = view.select(&g.accepts);
    let pairs_ok = |list: &[u32], target: &dyn Fn(u32) -> Option<u32>| {
        list.iter().enumerate().all(|(k, &x)| {
            list[k + 1..].iter().all(|&y| {
                let (tx, ty) = (target(x).unwrap(), target(y).unwrap());
                g.acks(x, ty) || g.acks(y, tx)
            })
        })
    };
    pairs_ok(&closes, &|c| g.start_of(c)) && pairs_ok(&accepts, &|a| g.close_of(a))
}

/// Properness of `g` plus one prepared node, assuming `g` itself is proper.
pub(crate) fn proper_with(
    g: &Blockgraph,
    kind: NodeKind,
    ancestors: &BitSet,
    parent: Option<u32>,
    phase: Phase,
) -> bool {
    match kind {
        NodeKind::Close => {
            let Phase::Closed { start, .. } = phase else {
                return true;
            };
            g.closes.iter().all(|&c| {
                g.acks(c, start) || ancestors.contains(g.start_of(c).expect("close has a start"))
            })
        }
        NodeKind::Accept => {
            let Some(Phase::Closed { close, .. }) = parent.map(|p| g.entry(p).phase) else {
                return true;
            };
            g.accepts.iter().all(|&a| {
                g.acks(a, close) || ancestors.contains(g.close_of(a).expect("accept has a close"))
            })
        }
        _ => true,
    }
}
