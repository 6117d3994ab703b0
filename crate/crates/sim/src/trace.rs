//! Execution traces, stored as JSON lines: a header, one line per event,
//! and a footer carrying final graph digests and an integrity hash.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use blockgraph::codec::decode_node;
use blockgraph::{Blockgraph, Node, Scheme};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub const TRACE_SCHEMA: &str = "blockgraph-trace/1";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("empty trace")]
    Empty,
    #[error("unsupported trace schema {found:?}, expected {TRACE_SCHEMA:?}")]
    Schema { found: String },
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("trace has no footer")]
    NoFooter,
    #[error("event {i}: {msg}")]
    Replay { i: u64, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankInfo {
    pub name: String,
    pub key: String,
    pub honest: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserInfo {
    pub name: String,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub schema: String,
    pub scenario: String,
    pub scenario_digest: String,
    pub seed: u64,
    pub scheme: String,
    pub shared_power: String,
    pub patience: u32,
    /// Hex encoding of the Init node.
    pub init: String,
    pub banks: Vec<BankInfo>,
    pub users: Vec<UserInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub i: u64,
    /// Logical time.
    pub t: u64,
    /// Bank the event happened at. Twins of an equivocating bank are
    /// labelled `NAME#i`.
    pub bank: String,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "kebab-case")]
pub enum EventKind {
    MessageSent {
        msg: u64,
        to: String,
        kind: String,
        digests: Vec<String>,
    },
    /// `from` is a bank name or `user:NAME`. User submissions carry the
    /// encoded transaction.
    MessageDelivered {
        msg: u64,
        from: String,
        kind: String,
        digests: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tx: Option<String>,
    },
    NodeCreated {
        digest: String,
        node: String,
    },
    NodeInserted {
        digest: String,
    },
    NodeQuarantined {
        digest: String,
        missing: usize,
    },
    NodeDiscarded {
        digest: String,
        reason: String,
    },
    /// `key` is the transaction key id.
    TxAccepted {
        key: String,
    },
    TxRejected {
        key: String,
        cause: String,
    },
    TxRetried {
        key: String,
    },
    Wake,
    /// An equivocating bank forked into twins.
    Split {
        twins: Vec<String>,
    },
    Crash,
    Warning {
        text: String,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::MessageSent { .. } => "message-sent",
            EventKind::MessageDelivered { .. } => "message-delivered",
            EventKind::NodeCreated { .. } => "node-created",
            EventKind::NodeInserted { .. } => "node-inserted",
            EventKind::NodeQuarantined { .. } => "node-quarantined",
            EventKind::NodeDiscarded { .. } => "node-discarded",
            EventKind::TxAccepted { .. } => "tx-accepted",
            EventKind::TxRejected { .. } => "tx-rejected",
            EventKind::TxRetried { .. } => "tx-retried",
            EventKind::Wake => "wake",
            EventKind::Split { .. } => "split",
            EventKind::Crash => "crash",
            EventKind::Warning { .. } => "warning",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footer {
    pub events: u64,
    pub end_time: u64,
    pub truncated: bool,
    /// Final graph fingerprint per bank label.
    pub graphs: BTreeMap<String, String>,
    /// SHA-256 over the header and event lines.
    pub integrity: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub header: Header,
    pub events: Vec<Event>,
    pub footer: Footer,
}

fn line<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("trace records always serialize")
}

impl Trace {
    /// Hash of the canonical header and event lines.
    pub fn compute_integrity(&self) -> String {
        let mut h = Sha256::new();
        h.update(line(&self.header));
        h.update(b"\n");
        for e in &self.events {
            h.update(line(e));
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn seal(&mut self) {
        self.footer.events = self.events.len() as u64;
        self.footer.integrity = self.compute_integrity();
    }

    pub fn integrity_ok(&self) -> bool {
        self.footer.events == self.events.len() as u64 && self.footer.integrity == self.compute_integrity()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        out.push_str(&line(&self.header));
        out.push('\n');
        for e in &self.events {
            out.push_str(&line(e));
            out.push('\n');
        }
        out.push_str(&line(&self.footer));
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceError> {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| (n + 1, l))
            .collect();
        let Some(&(n0, first)) = lines.first() else {
            return Err(TraceError::Empty);
        };
        let raw: serde_json::Value =
            serde_json::from_str(first).map_err(|source| TraceError::Json { line: n0, source })?;
        let found = raw.get("schema").and_then(|s| s.as_str()).unwrap_or("");
        if found != TRACE_SCHEMA {
            return Err(TraceError::Schema {
                found: found.to_string(),
            });
        }
        let header: Header =
            serde_json::from_value(raw).map_err(|source| TraceError::Json { line: n0, source })?;
        if lines.len() < 2 {
            return Err(TraceError::NoFooter);
        }
        let (&(nf, last), body) = lines[1..].split_last().expect("at least one line");
        let footer: Footer =
            serde_json::from_str(last).map_err(|source| TraceError::Json { line: nf, source })?;
        let events = body
            .iter()
            .map(|&(n, l)| serde_json::from_str(l).map_err(|source| TraceError::Json { line: n, source }))
            .collect::<Result<Vec<Event>, _>>()?;
        Ok(Trace {
            header,
            events,
            footer,
        })
    }

    pub fn bank_info(&self, label: &str) -> Option<&BankInfo> {
        let name = label.split('#').next().unwrap_or(label);
        self.header.banks.iter().find(|b| b.name == name)
    }

    /// Whether events labelled `label` come from an honest bank.
    pub fn is_honest(&self, label: &str) -> bool {
        self.bank_info(label).is_some_and(|b| b.honest) && !label.contains('#')
    }

    /// Rebuilds every bank label's graph from the first `upto` events.
    pub fn graphs(&self, upto: usize) -> Result<BTreeMap<String, Blockgraph>, TraceError> {
        let bad = |i: u64, msg: String| TraceError::Replay { i, msg };
        let init = hex::decode(&self.header.init)
            .ok()
            .and_then(|b| decode_node(&b).ok())
            .and_then(|n| match n {
                Node::Init(i) => Some(i),
                _ => None,
            })
            .ok_or_else(|| bad(0, "header init is not an Init node".into()))?;
        let scheme = Scheme::from_name(&self.header.scheme).ok_or_else(|| bad(0, "unknown scheme".into()))?;
        let genesis = Blockgraph::genesis(scheme, init);
        let mut graphs: BTreeMap<String, Blockgraph> =
            self.header.banks.iter().map(|b| (b.name.clone(), genesis.clone())).collect();
        let mut known: HashMap<String, Arc<Node>> = HashMap::new();
        for e in self.events.iter().take(upto) {
            let node = match &e.kind {
                EventKind::NodeCreated { digest, node } => {
                    let n = hex::decode(node)
                        .map_err(|x| x.to_string())
                        .and_then(|b| decode_node(&b).map_err(|x| x.to_string()))
                        .map_err(|m| bad(e.i, m))?;
                    let n = Arc::new(n);
                    known.insert(digest.clone(), n.clone());
                    n
                }
                EventKind::NodeInserted { digest } => known
                    .get(digest)
                    .cloned()
                    .ok_or_else(|| bad(e.i, format!("node {digest} inserted before it was created")))?,
                EventKind::Split { twins } => {
                    let g = graphs.get(&e.bank).cloned().unwrap_or_else(|| genesis.clone());
                    for t in twins {
                        graphs.insert(t.clone(), g.clone());
                    }
                    continue;
                }
                _ => continue,
            };
            let g = graphs.entry(e.bank.clone()).or_insert_with(|| genesis.clone());
            if !g.contains(&node.digest()) {
                g.insert_node(node).map_err(|x| bad(e.i, x.to_string()))?;
            }
        }
        Ok(graphs)
    }

    /// Labels of honest banks in header order.
    pub fn honest_banks(&self) -> Vec<String> {
        self.header
            .banks
            .iter()
            .filter(|b| b.honest)
            .map(|b| b.name.clone())
            .collect()
    }
}
