//! The run report: a deterministic summary derived from a trace alone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use blockgraph::codec::decode_transaction;
use blockgraph::{total_balance, AccountId};
use blockgraph_oracle::{check_all, CheckReport, OracleConfig};
use blockgraph_sim::{EventKind, Trace};

pub const REPORT_SCHEMA: &str = "blockgraph-report/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankSummary {
    pub label: String,
    pub honest: bool,
    pub nodes: usize,
    pub fingerprint: String,
    pub accepted: u64,
    /// Final rejections by cause.
    pub rejected: BTreeMap<String, u64>,
    /// Submitted transactions without a final decision.
    pub undecided: u64,
    /// Total balance of the final graph, keyed `user@bank`.
    pub balances: BTreeMap<String, i128>,
    /// Applied transaction ids.
    pub applied: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub scenario: String,
    pub scenario_digest: String,
    pub seed: u64,
    pub scheme: String,
    pub shared_power: String,
    pub events: u64,
    pub end_time: u64,
    pub truncated: bool,
    pub pass: bool,
    pub banks: Vec<BankSummary>,
    pub checks: Vec<CheckReport>,
    /// The only field that depends on the machine.
    pub wall_time_ms: u64,
}

impl RunReport {
    pub fn check(&self, name: &str) -> Option<&CheckReport> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn bank(&self, label: &str) -> Option<&BankSummary> {
        self.banks.iter().find(|b| b.label == label)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    /// The report without its wall time, for byte comparisons.
    pub fn timeless(&self) -> RunReport {
        RunReport {
            wall_time_ms: 0,
            ..self.clone()
        }
    }
}

/// Builds the report of a trace; `wall_time_ms` is recorded as given.
pub fn build(trace: &Trace, wall_time_ms: u64) -> Result<RunReport, String> {
    let graphs = trace.graphs(trace.events.len()).map_err(|e| e.to_string())?;
    let banks: BTreeMap<String, String> =
        trace.header.banks.iter().map(|b| (b.key.clone(), b.name.clone())).collect();
    let users: BTreeMap<String, String> =
        trace.header.users.iter().map(|u| (u.key.clone(), u.name.clone())).collect();
    let account = |a: &AccountId| {
        let bank = hex::encode(a.bank.0);
        let user = hex::encode(a.user.0);
        format!(
            "{}@{}",
            users.get(&user).cloned().unwrap_or_else(|| user[..8].to_string()),
            banks.get(&bank).cloned().unwrap_or_else(|| bank[..8].to_string())
        )
    };

    let mut decisions: BTreeMap<&str, BTreeMap<&str, Option<&str>>> = BTreeMap::new();
    let mut submitted: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for e in &trace.events {
        let d = decisions.entry(&e.bank).or_default();
        match &e.kind {
            EventKind::TxAccepted { key } => {
                d.insert(key, Some("accepted"));
            }
            EventKind::TxRejected { key, cause } => {
                if d.get(key.as_str()) != Some(&Some("accepted")) {
                    d.insert(key, Some(cause));
                }
            }
            EventKind::TxRetried { key } => {
                d.insert(key, None);
            }
            EventKind::MessageDelivered { tx: Some(tx), .. } => {
                let key = hex::decode(tx)
                    .ok()
                    .and_then(|b| decode_transaction(&b).ok())
                    .map(|t| t.key().id().to_hex())
                    .ok_or_else(|| format!("event {}: undecodable transaction", e.i))?;
                submitted.entry(&e.bank).or_default().push(key);
            }
            _ => {}
        }
    }

    let mut out = Vec::new();
    for (label, g) in &graphs {
        let sheet = total_balance(g);
        let d = decisions.remove(label.as_str()).unwrap_or_default();
        let mut rejected: BTreeMap<String, u64> = BTreeMap::new();
        let mut accepted = 0;
        for v in d.values().flatten() {
            match *v {
                "accepted" => accepted += 1,
                c => *rejected.entry(c.to_string()).or_default() += 1,
            }
        }
        let mut subs = submitted.remove(label.as_str()).unwrap_or_default();
        subs.sort();
        subs.dedup();
        let undecided = subs.iter().filter(|k| !matches!(d.get(k.as_str()), Some(Some(_)))).count() as u64;
        out.push(BankSummary {
            label: label.clone(),
            honest: trace.is_honest(label),
            nodes: g.len(),
            fingerprint: g.fingerprint().to_hex(),
            accepted,
            rejected,
            undecided,
            balances: sheet.balances.iter().map(|(a, v)| (account(a), *v)).collect(),
            applied: sheet.applied.iter().map(|k| k.id().to_hex()).collect(),
        });
    }

    let checks = check_all(trace, &OracleConfig::default());
    Ok(RunReport {
        schema: REPORT_SCHEMA.to_string(),
        scenario: trace.header.scenario.clone(),
        scenario_digest: trace.header.scenario_digest.clone(),
        seed: trace.header.seed,
        scheme: trace.header.scheme.clone(),
        shared_power: trace.header.shared_power.clone(),
        events: trace.events.len() as u64,
        end_time: trace.footer.end_time,
        truncated: trace.footer.truncated,
        pass: checks.iter().all(|c| c.pass),
        banks: out,
        checks,
        wall_time_ms,
    })
}
