//! Append-only blockgraph store.
//!
//! Nodes live in insertion order, which is always a topological order because
//! a node is only admitted once everything it references is present. Each
//! entry keeps its strict-ancestor set as a bit set, so acknowledgment is a
//! constant-time lookup.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use crate::bitset::BitSet;
use crate::codec;
use crate::crypto::{Digest, Scheme};
use crate::error::{DecodeError, GraphError, GrammarError, InsertError};
use crate::types::{AccountId, BankId, InitNode, Node, NodeKind, NodeRef, Parent, Payload, TxKey};

/// Where a chain stands after a given node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// No block open: after Init, after an Accept, or inter-block Updates.
    Idle,
    Open { start: u32 },
    Closed { start: u32, close: u32 },
}

/// Whether a node counts as acknowledging itself. Support sets rely on it: a
/// block owner supports its own block through the Start node.
pub const REFLEXIVE_ACK: bool = true;

#[derive(Debug, Clone)]
pub(crate) struct Entry {
    pub node: Arc<Node>,
    pub digest: Digest,
    pub parent: Option<u32>,
    /// Parent first, then update references.
    pub edges: Vec<u32>,
    /// Strict ancestors.
    pub ancestors: BitSet,
    pub phase: Phase,
    /// Same-bank children.
    pub children: Vec<u32>,
    /// For Close nodes: which transactions of the block's Start survive the
    /// conflict scan over the Close subgraph, by position.
    pub applied: Vec<bool>,
}

impl Entry {
    pub fn bank(&self) -> Option<BankId> {
        self.node.bank()
    }

    pub fn kind(&self) -> NodeKind {
        self.node.kind()
    }
}

/// One occurrence of a transaction inside a Start node.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TxSite {
    pub key: TxKey,
    pub start: u32,
}

/// A node that passed structural checks but is not yet stored.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub(crate) digest: Digest,
    pub(crate) parent: Option<u32>,
    pub(crate) edges: Vec<u32>,
    pub(crate) ancestors: BitSet,
    pub(crate) phase: Phase,
}

impl Prepared {
    pub fn digest(&self) -> Digest {
        self.digest
    }
}

/// A run of one chain from a Start through its Accept (or the open tail).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub start: NodeRef,
    pub close: Option<NodeRef>,
    pub accept: Option<NodeRef>,
    pub members: Vec<NodeRef>,
}

#[derive(Debug, Clone)]
pub struct Blockgraph {
    scheme: Scheme,
    pub(crate) entries: Vec<Entry>,
    index: HashMap<Digest, u32>,
    banks: BTreeMap<BankId, Vec<u32>>,
    by_seq: HashMap<(BankId, u64), Vec<u32>>,
    pub(crate) starts: Vec<u32>,
    pub(crate) closes: Vec<u32>,
    pub(crate) accepts: Vec<u32>,
    pub(crate) accepts_of_close: HashMap<u32, Vec<u32>>,
    pub(crate) accepts_of_start: HashMap<u32, Vec<u32>>,
    pub(crate) tx_index: HashMap<(AccountId, u64), Vec<TxSite>>,
}

impl PartialEq for Blockgraph {
    /// Graphs are equal when they hold the same node set; edges derive from
    /// node contents, so insertion order does not matter.
    fn eq(&self, other: &Self) -> bool {
        self.len() == other.len() && self.entries.iter().all(|e| other.contains(&e.digest))
    }
}

impl Eq for Blockgraph {}

impl Blockgraph {
    /// A graph holding only the given Init node.
    pub fn genesis(scheme: Scheme, init: InitNode) -> Self {
        let node = Arc::new(Node::Init(init));
        let digest = node.digest();
        let mut g = Blockgraph {
            scheme,
            entries: Vec::new(),
            index: HashMap::new(),
            banks: BTreeMap::new(),
            by_seq: HashMap::new(),
            starts: Vec::new(),
            closes: Vec::new(),
            accepts: Vec::new(),
            accepts_of_close: HashMap::new(),
            accepts_of_start: HashMap::new(),
            tx_index: HashMap::new(),
        };
        g.entries.push(Entry {
            node,
            digest,
            parent: None,
            edges: Vec::new(),
            ancestors: BitSet::default(),
            phase: Phase::Idle,
            children: Vec::new(),
            applied: Vec::new(),
        });
        g.index.insert(digest, 0);
        g
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn init(&self) -> &InitNode {
        match &*self.entries[0].node {
            Node::Init(i) => i,
            Node::Chain(_) => unreachable!("entry 0 is always the init node"),
        }
    }

    pub fn init_digest(&self) -> Digest {
        self.entries[0].digest
    }

    pub fn contains(&self, d: &Digest) -> bool {
        self.index.contains_key(d)
    }

    pub fn get(&self, d: &Digest) -> Option<&Arc<Node>> {
        self.index.get(d).map(|&i| &self.entries[i as usize].node)
    }

    pub(crate) fn idx(&self, d: &Digest) -> Result<u32, GraphError> {
        self.index.get(d).copied().ok_or(GraphError::Unresolved(*d))
    }

    pub(crate) fn entry(&self, i: u32) -> &Entry {
        &self.entries[i as usize]
    }

    /// Nodes in insertion (topological) order.
    pub fn nodes(&self) -> impl Iterator<Item = &Arc<Node>> {
        self.entries.iter().map(|e| &e.node)
    }

    pub fn digests(&self) -> impl Iterator<Item = Digest> + '_ {
        self.entries.iter().map(|e| e.digest)
    }

    pub fn banks(&self) -> impl Iterator<Item = BankId> + '_ {
        self.banks.keys().copied()
    }

    /// Nodes of one bank ordered by sequence number (ties by insertion).
    pub fn chain(&self, bank: &BankId) -> Vec<&Arc<Node>> {
        let mut idx = self.banks.get(bank).cloned().unwrap_or_default();
        idx.sort_by_key(|&i| (self.entries[i as usize].node.seq(), i));
        idx.into_iter().map(|i| &self.entries[i as usize].node).collect()
    }

    pub(crate) fn bank_entries(&self, bank: &BankId) -> &[u32] {
        self.banks.get(bank).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Order-independent fingerprint of the node set.
    pub fn fingerprint(&self) -> Digest {
        let set: BTreeSet<Digest> = self.digests().collect();
        let mut buf = Vec::with_capacity(set.len() * 32);
        for d in set {
            buf.extend_from_slice(&d.0);
        }
        Digest::of(&buf)
    }

    /// Structural checks for a node that is not yet in the graph: signatures,
    /// reference resolution and chain grammar.
    pub fn prepare(&self, node: &Node) -> Result<Prepared, InsertError> {
        let digest = node.digest();
        if self.contains(&digest) {
            return Err(InsertError::Duplicate(digest));
        }
        let Node::Chain(c) = node else {
            return Err(GrammarError::SecondInit.into());
        };
        if !node.verify(self.scheme) {
            return Err(InsertError::BadSignature);
        }
        if let Payload::Start(txs) = &c.payload {
            if txs.iter().any(|t| !t.verify(self.scheme)) {
                return Err(InsertError::BadSignature);
            }
        }

        let mut missing = Vec::new();
        let parent = match c.parent {
            Parent::Init(h) => {
                if h != self.init_digest() || c.seq != 1 {
                    return Err(GrammarError::BadParent.into());
                }
                0
            }
            Parent::Node(r) => {
                if r.bank != c.bank || r.seq + 1 != c.seq {
                    return Err(GrammarError::BadParent.into());
                }
                match self.resolve(&r)? {
                    Some(i) => i,
                    None => {
                        missing.push(r);
                        u32::MAX
                    }
                }
            }
        };
        let mut edges = vec![parent];
        if let Payload::Update(refs) = &c.payload {
            for r in refs {
                if r.bank == c.bank {
                    return Err(GrammarError::SelfReference.into());
                }
                match self.resolve(r)? {
                    Some(i) => edges.push(i),
                    None => missing.push(*r),
                }
            }
        }
        if !missing.is_empty() {
            missing.sort();
            missing.dedup();
            return Err(InsertError::MissingAncestors(missing));
        }

        let before = self.entries[parent as usize].phase;
        let phase = match (&c.payload, before) {
            (Payload::Start(_), Phase::Idle) => Phase::Open {
                start: u32::MAX, // patched on commit
            },
            (Payload::Start(_), _) => return Err(GrammarError::StartInsideBlock.into()),
            (Payload::Close, Phase::Open { start }) => Phase::Closed {
                start,
                close: u32::MAX,
            },
            (Payload::Close, _) => return Err(GrammarError::CloseWithoutStart.into()),
            (Payload::Accept, Phase::Closed { .. }) => Phase::Idle,
            (Payload::Accept, _) => return Err(GrammarError::AcceptWithoutClose.into()),
            (Payload::Update(_), p) => p,
        };

        let mut ancestors = BitSet::with_capacity(self.entries.len());
        for &e in &edges {
            ancestors.insert(e);
            ancestors.union_with(&self.entries[e as usize].ancestors);
        }
        Ok(Prepared {
            digest,
            parent: Some(parent),
            edges,
            ancestors,
            phase,
        })
    }

    fn resolve(&self, r: &NodeRef) -> Result<Option<u32>, GrammarError> {
        match self.index.get(&r.hash) {
            None => Ok(None),
            Some(&i) => {
                let n = &self.entries[i as usize].node;
                if n.bank() != Some(r.bank) || n.seq() != Some(r.seq) {
                    return Err(GrammarError::RefMismatch(*r));
                }
                Ok(Some(i))
            }
        }
    }

    /// Stores a prepared node. `prepared` must come from `prepare(&node)` on
    /// this graph with no insertion in between.
    pub fn commit(&mut self, node: Arc<Node>, prepared: Prepared) -> Digest {
        let i = self.entries.len() as u32;
        let Prepared {
            digest,
            parent,
            edges,
            ancestors,
            mut phase,
        } = prepared;
        let (bank, seq) = (node.bank().unwrap(), node.seq().unwrap());
        let mut applied = Vec::new();
        match node.kind() {
            NodeKind::Start => {
                phase = Phase::Open { start: i };
                self.starts.push(i);
                for tx in node.transactions() {
                    self.tx_index
                        .entry((tx.source, tx.seq))
                        .or_default()
                        .push(TxSite {
                            key: tx.key(),
                            start: i,
                        });
                }
            }
            NodeKind::Close => {
                if let Phase::Closed { start, .. } = phase {
                    phase = Phase::Closed { start, close: i };
                    applied = self.conflict_scan(start, &ancestors);
                }
                self.closes.push(i);
            }
            NodeKind::Accept => {
                let p = parent.expect("accept has a parent");
                if let Phase::Closed { start, close } = self.entries[p as usize].phase {
                    self.accepts_of_close.entry(close).or_default().push(i);
                    self.accepts_of_start.entry(start).or_default().push(i);
                }
                self.accepts.push(i);
            }
            NodeKind::Update | NodeKind::Init => {}
        }
        if let Some(p) = parent {
            if p != 0 {
                self.entries[p as usize].children.push(i);
            }
        }
        self.entries.push(Entry {
            node,
            digest,
            parent,
            edges,
            ancestors,
            phase,
            children: Vec::new(),
            applied,
        });
        self.index.insert(digest, i);
        self.banks.entry(bank).or_default().push(i);
        self.by_seq.entry((bank, seq)).or_default().push(i);
        digest
    }

    /// A transaction of `start` is blocked if any Start inside `scope` holds a
    /// conflicting transaction; the conflicting one's own fate is irrelevant.
    fn conflict_scan(&self, start: u32, scope: &BitSet) -> Vec<bool> {
        self.entries[start as usize]
            .node
            .transactions()
            .iter()
            .map(|t| {
                let key = t.key();
                !self.tx_index[&(t.source, t.seq)]
                    .iter()
                    .any(|s| scope.contains(s.start) && s.key.conflicts_with(&key))
            })
            .collect()
    }

    /// Inserts a node whose references all resolve.
    pub fn insert_node(&mut self, node: impl Into<Arc<Node>>) -> Result<Digest, InsertError> {
        let node = node.into();
        let prepared = self.prepare(&node)?;
        Ok(self.commit(node, prepared))
    }

    /// True iff `w` is reachable from `v`. Every node acknowledges itself.
    pub fn acknowledges(&self, v: &Digest, w: &Digest) -> Result<bool, GraphError> {
        let (vi, wi) = (self.idx(v)?, self.idx(w)?);
        Ok(self.acks(vi, wi))
    }

    pub(crate) fn acks(&self, v: u32, w: u32) -> bool {
        (REFLEXIVE_ACK && v == w) || self.entries[v as usize].ancestors.contains(w)
    }

    fn extract(&self, members: &BitSet) -> Blockgraph {
        let mut g = Blockgraph::genesis(self.scheme, self.init().clone());
        for i in members.iter().filter(|&i| i != 0) {
            let e = &self.entries[i as usize];
            let prepared = g.prepare(&e.node).expect("ancestor-closed subset re-inserts");
            g.commit(e.node.clone(), prepared);
        }
        g
    }

    /// The representing graph of `v` minus `v` itself.
    pub fn subgraph(&self, v: &Digest) -> Result<Blockgraph, GraphError> {
        let i = self.idx(v)?;
        let mut members = self.entries[i as usize].ancestors.clone();
        members.insert(0);
        Ok(self.extract(&members))
    }

    /// `v` together with everything it acknowledges.
    pub fn representing(&self, v: &Digest) -> Result<Blockgraph, GraphError> {
        let i = self.idx(v)?;
        let mut members = self.entries[i as usize].ancestors.clone();
        members.insert(0);
        members.insert(i);
        Ok(self.extract(&members))
    }

    /// Start of the block a Close or Accept belongs to.
    pub(crate) fn start_of(&self, i: u32) -> Option<u32> {
        let e = &self.entries[i as usize];
        match e.kind() {
            NodeKind::Close => match e.phase {
                Phase::Closed { start, .. } => Some(start),
                _ => None,
            },
            NodeKind::Accept => match self.entries[e.parent? as usize].phase {
                Phase::Closed { start, .. } => Some(start),
                _ => None,
            },
            _ => None,
        }
    }

    /// Close an Accept node completes.
    pub(crate) fn close_of(&self, i: u32) -> Option<u32> {
        let e = &self.entries[i as usize];
        if e.kind() != NodeKind::Accept {
            return None;
        }
        match self.entries[e.parent? as usize].phase {
            Phase::Closed { close, .. } => Some(close),
            _ => None,
        }
    }

    pub(crate) fn node_ref(&self, i: u32) -> NodeRef {
        let e = &self.entries[i as usize];
        NodeRef {
            bank: e.bank().expect("chain node"),
            seq: e.node.seq().expect("chain node"),
            hash: e.digest,
        }
    }

    /// Partitions a bank's chain into blocks, one per branch.
    pub fn blocks_of(&self, bank: &BankId) -> Vec<Block> {
        let mut out = Vec::new();
        let mut starts: Vec<u32> = self
            .bank_entries(bank)
            .iter()
            .copied()
            .filter(|&i| self.entries[i as usize].kind() == NodeKind::Start)
            .collect();
        starts.sort_by_key(|&i| (self.entries[i as usize].node.seq(), i));
        for s in starts {
            let mut stack = vec![vec![s]];
            while let Some(path) = stack.pop() {
                let last = *path.last().unwrap();
                let e = &self.entries[last as usize];
                let next: Vec<u32> = if e.kind() == NodeKind::Accept {
                    Vec::new()
                } else {
                    e.children
                        .iter()
                        .copied()
                        .filter(|&c| self.entries[c as usize].kind() != NodeKind::Start)
                        .collect()
                };
                if next.is_empty() {
                    out.push(self.block_from_path(&path));
                } else {
                    for &c in next.iter().rev() {
                        let mut p = path.clone();
                        p.push(c);
                        stack.push(p);
                    }
                }
            }
        }
        out
    }

    fn block_from_path(&self, path: &[u32]) -> Block {
        let find = |k: NodeKind| {
            path.iter()
                .copied()
                .find(|&i| self.entries[i as usize].kind() == k)
                .map(|i| self.node_ref(i))
        };
        let accept = find(NodeKind::Accept);
        // an open block keeps trailing updates; a closed one ends at its accept
        Block {
            start: self.node_ref(path[0]),
            close: find(NodeKind::Close),
            accept,
            members: path.iter().map(|&i| self.node_ref(i)).collect(),
        }
    }

    /// Pairs of distinct nodes of `bank` sharing a sequence number.
    pub fn equivocation_evidence(&self, bank: &BankId) -> Vec<(Arc<Node>, Arc<Node>)> {
        let mut seqs: Vec<_> = self
            .by_seq
            .iter()
            .filter(|((b, _), v)| b == bank && v.len() > 1)
            .collect();
        seqs.sort_by_key(|((_, s), _)| *s);
        let mut out = Vec::new();
        for (_, idx) in seqs {
            for (a, &i) in idx.iter().enumerate() {
                for &j in &idx[a + 1..] {
                    out.push((
                        self.entries[i as usize].node.clone(),
                        self.entries[j as usize].node.clone(),
                    ));
                }
            }
        }
        out
    }

    /// Banks with equivocation evidence among `members` (all nodes if `None`).
    pub(crate) fn malicious_within(&self, members: Option<&BitSet>) -> BTreeSet<BankId> {
        let mut out = BTreeSet::new();
        for ((bank, _), idx) in &self.by_seq {
            if idx.len() < 2 || out.contains(bank) {
                continue;
            }
            let present = idx
                .iter()
                .filter(|&&i| members.is_none_or(|m| m.contains(i)))
                .count();
            if present > 1 {
                out.insert(*bank);
            }
        }
        out
    }

    pub fn is_malicious(&self, bank: &BankId) -> bool {
        self.malicious_within(None).contains(bank)
    }

    /// Nodes not acknowledged by any other node.
    pub fn heads(&self) -> Vec<Digest> {
        let mut covered = BitSet::with_capacity(self.entries.len());
        for e in &self.entries {
            for &x in &e.edges {
                covered.insert(x);
            }
        }
        (0..self.entries.len() as u32)
            .filter(|&i| !covered.contains(i))
            .map(|i| self.entries[i as usize].digest)
            .collect()
    }

    /// Line-delimited hex of canonical node encodings in topological order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&hex::encode(codec::encode_node(&e.node)));
            out.push('\n');
        }
        out
    }

    /// Inverse of [`Blockgraph::dump`].
    pub fn load(scheme: Scheme, text: &str) -> Result<Blockgraph, LoadError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines.next().ok_or(LoadError::Empty)?;
        let Node::Init(init) = decode_line(first)? else {
            return Err(LoadError::NoInit);
        };
        let mut g = Blockgraph::genesis(scheme, init);
        for (n, line) in lines.enumerate() {
            let node = decode_line(line)?;
            g.insert_node(node).map_err(|e| LoadError::Insert(n + 2, e))?;
        }
        Ok(g)
    }

    /// DOT rendering: one cluster per bank, blocks boxed, update edges dashed.
    pub fn to_dot(&self, bank_name: &dyn Fn(&BankId) -> String) -> String {
        let id = |i: u32| format!("n{}", &self.entries[i as usize].digest.to_hex()[..16]);
        let mut out = String::from("digraph blockgraph {\n  rankdir=BT;\n  node [shape=box, fontsize=10];\n");
        let _ = writeln!(out, "  {} [label=\"Init\", shape=ellipse];", id(0));
        let mut named: Vec<(String, BankId)> =
            self.banks.keys().map(|b| (bank_name(b), *b)).collect();
        named.sort();
        for (name, bank) in &named {
            let _ = writeln!(out, "  subgraph \"cluster_{name}\" {{\n    label=\"{name}\";");
            let mut placed = BTreeSet::new();
            for (k, block) in self.blocks_of(bank).iter().enumerate() {
                let members: Vec<u32> = block
                    .members
                    .iter()
                    .map(|r| self.index[&r.hash])
                    .filter(|i| !placed.contains(i))
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let _ = writeln!(
                    out,
                    "    subgraph \"cluster_{name}_b{k}\" {{\n      style=dotted; color=blue; label=\"\";"
                );
                for i in members {
                    placed.insert(i);
                    let _ = writeln!(out, "      {} [label=\"{}\"];", id(i), self.label(i));
                }
                out.push_str("    }\n");
            }
            let mut rest: Vec<u32> = self
                .bank_entries(bank)
                .iter()
                .copied()
                .filter(|i| !placed.contains(i))
                .collect();
            rest.sort_by_key(|&i| (self.entries[i as usize].node.seq(), i));
            for i in rest {
                let _ = writeln!(out, "    {} [label=\"{}\"];", id(i), self.label(i));
            }
            out.push_str("  }\n");
        }
        for (i, e) in self.entries.iter().enumerate().skip(1) {
            for (k, &t) in e.edges.iter().enumerate() {
                let style = if k == 0 {
                    "color=black"
                } else {
                    "style=dashed, color=gray"
                };
                let _ = writeln!(out, "  {} -> {} [{style}];", id(i as u32), id(t));
            }
        }
        out.push_str("}\n");
        out
    }

    fn label(&self, i: u32) -> String {
        let n = &self.entries[i as usize].node;
        let seq = n.seq().unwrap_or(0);
        match n.kind() {
            NodeKind::Start => format!("S{seq} ({} tx)", n.transactions().len()),
            NodeKind::Update => format!("U{seq}"),
            NodeKind::Close => format!("C{seq}"),
            NodeKind::Accept => format!("A{seq}"),
            NodeKind::Init => "Init".into(),
        }
    }
}

fn decode_line(line: &str) -> Result<Node, LoadError> {
    let bytes = hex::decode(line.trim()).map_err(|_| LoadError::Hex)?;
    Ok(codec::decode_node(&bytes)?)
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("empty dump")]
    Empty,
    #[error("first line must be the init node")]
    NoInit,
    #[error("line is not valid hex")]
    Hex,
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("line {0}: {1}")]
    Insert(usize, InsertError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{Builder, World};

    fn two_banks() -> Builder {
        Builder::new(World::new(&[("B1", &[("u1", 40)]), ("B2", &[("u2", 10)])]))
    }

    #[test]
    fn start_on_genesis_inserts() {
        let mut b = two_banks();
        b.start("B1", vec![]);
        assert_eq!(b.g.len(), 2);
    }

    #[test]
    fn accept_right_after_start_is_a_grammar_error() {
        let mut b = two_banks();
        b.start("B1", vec![]);
        assert_eq!(
            b.try_add("B1", Payload::Accept),
            Err(InsertError::Grammar(GrammarError::AcceptWithoutClose))
        );
    }

    #[test]
    fn close_needs_open_start() {
        let mut b = two_banks();
        assert_eq!(
            b.try_add("B1", Payload::Close),
            Err(InsertError::Grammar(GrammarError::CloseWithoutStart))
        );
        b.start("B1", vec![]);
        assert_eq!(
            b.try_add("B1", Payload::Start(vec![])),
            Err(InsertError::Grammar(GrammarError::StartInsideBlock))
        );
    }

    #[test]
    fn unknown_update_reference_reports_missing() {
        let mut b = two_banks();
        let ghost = NodeRef {
            bank: b.w.bank("B2"),
            seq: 1,
            hash: Digest([9; 32]),
        };
        assert_eq!(
            b.try_add("B1", Payload::Update(vec![ghost])),
            Err(InsertError::MissingAncestors(vec![ghost]))
        );
    }

    #[test]
    fn own_bank_reference_is_rejected() {
        let mut b = two_banks();
        let s = b.start("B1", vec![]);
        let r = b.g.get(&s).unwrap().reference().unwrap();
        assert_eq!(
            b.try_add("B1", Payload::Update(vec![r])),
            Err(InsertError::Grammar(GrammarError::SelfReference))
        );
    }

    #[test]
    fn mismatched_reference_is_rejected() {
        let mut b = two_banks();
        let s = b.start("B1", vec![]);
        let mut r = b.g.get(&s).unwrap().reference().unwrap();
        r.seq = 2;
        assert_eq!(
            b.try_add("B2", Payload::Update(vec![r])),
            Err(InsertError::Grammar(GrammarError::RefMismatch(r)))
        );
    }

    #[test]
    fn bad_signature_is_rejected() {
        let mut b = two_banks();
        let Node::Chain(mut c) = b.make("B1", Payload::Start(vec![])) else {
            unreachable!()
        };
        c.sig.0[0] ^= 1;
        assert_eq!(b.g.insert_node(Node::Chain(c)), Err(InsertError::BadSignature));
    }

    #[test]
    fn duplicate_and_second_init_are_rejected() {
        let mut b = two_banks();
        let n = b.make("B1", Payload::Start(vec![]));
        let d = b.insert(n.clone()).unwrap();
        assert_eq!(b.g.insert_node(n), Err(InsertError::Duplicate(d)));
        let init = Node::Init(b.g.init().clone());
        assert!(matches!(b.g.insert_node(init), Err(InsertError::Duplicate(_))));
        let other = Node::Init(InitNode::new(vec![]).unwrap());
        assert_eq!(
            b.g.insert_node(other),
            Err(InsertError::Grammar(GrammarError::SecondInit))
        );
    }

    #[test]
    fn acknowledgment_is_reflexive_and_follows_edges() {
        let mut b = two_banks();
        let s = b.start("B1", vec![]);
        let u = b.update("B2", &[s]);
        let g = &b.g;
        assert!(g.acknowledges(&s, &s).unwrap());
        assert!(g.acknowledges(&s, &g.init_digest()).unwrap());
        assert!(g.acknowledges(&u, &s).unwrap());
        assert!(!g.acknowledges(&s, &u).unwrap());
        assert_eq!(
            g.acknowledges(&Digest([1; 32]), &s),
            Err(GraphError::Unresolved(Digest([1; 32])))
        );
    }

    #[test]
    fn subgraph_of_first_start_is_genesis() {
        let mut b = two_banks();
        let s = b.start("B1", vec![]);
        let sub = b.g.subgraph(&s).unwrap();
        assert_eq!(sub.len(), 1);
        assert!(!sub.contains(&s));
        let rep = b.g.representing(&s).unwrap();
        assert_eq!(rep.len(), 2);
    }

    #[test]
    fn subgraph_of_update_holds_referenced_start() {
        let mut b = two_banks();
        let s = b.start("B2", vec![]);
        b.start("B1", vec![]);
        let u = b.update("B1", &[s]);
        let sub = b.g.subgraph(&u).unwrap();
        assert!(sub.contains(&s));
        assert!(!sub.contains(&u));
        assert_eq!(sub.len(), 3);
    }

    #[test]
    fn blocks_partition_chains() {
        let mut b = two_banks();
        let f = b.start("B2", vec![]);
        b.start("B1", vec![]);
        b.update("B1", &[f]);
        let c = b.close("B1");
        let fu = b.update("B2", &[c]);
        b.update("B1", &[fu]);
        b.accept("B1");
        b.try_add("B1", Payload::Update(vec![])).unwrap();
        b.start("B1", vec![]);

        let blocks = b.g.blocks_of(&b.w.bank("B1"));
        assert_eq!(blocks.len(), 2);
        assert!(blocks[0].close.is_some() && blocks[0].accept.is_some());
        assert_eq!(blocks[0].members.len(), 5);
        assert!(blocks[1].close.is_none() && blocks[1].accept.is_none());
        assert_eq!(blocks[1].members.len(), 1);
        let open = b.g.blocks_of(&b.w.bank("B2"));
        assert_eq!(open.len(), 1);
        assert_eq!(open[0].members.len(), 2);
    }

    #[test]
    fn inter_block_update_belongs_to_no_block() {
        let mut b = two_banks();
        b.start("B1", vec![]);
        b.close("B1");
        b.accept("B1");
        let u = b.try_add("B1", Payload::Update(vec![])).unwrap();
        b.start("B1", vec![]);
        let blocks = b.g.blocks_of(&b.w.bank("B1"));
        assert_eq!(blocks.len(), 2);
        assert!(blocks.iter().all(|bl| bl.members.iter().all(|m| m.hash != u)));
    }

    #[test]
    fn equivocation_evidence_pairs() {
        let mut b = two_banks();
        let bank = b.w.bank("B2");
        assert!(b.g.equivocation_evidence(&bank).is_empty());
        b.start("B2", vec![]);
        let tx = b.w.tx("u2@B2", "u1@B1", 5, 1);
        let twin = b.make_at("B2", None, Payload::Start(vec![tx]));
        b.insert(twin).unwrap();
        assert_eq!(b.g.equivocation_evidence(&bank).len(), 1);
        assert!(b.g.is_malicious(&bank));
        assert!(!b.g.is_malicious(&b.w.bank("B1")));
    }

    #[test]
    fn dump_round_trips() {
        let mut b = two_banks();
        let s = b.start("B1", vec![]);
        b.update("B2", &[s]);
        let again = Blockgraph::load(Scheme::Test, &b.g.dump()).unwrap();
        assert_eq!(b.g, again);
        assert_eq!(b.g.dump(), again.dump());
        assert_eq!(b.g.fingerprint(), again.fingerprint());
    }

    #[test]
    fn dot_is_deterministic() {
        let mut b = two_banks();
        let s = b.start("B1", vec![]);
        b.update("B2", &[s]);
        let names = |id: &BankId| b.w.name_of(id);
        let dot = b.g.to_dot(&names);
        assert_eq!(dot, b.g.to_dot(&names));
        assert!(dot.contains("cluster_B1") && dot.contains("style=dashed"));
    }
}
