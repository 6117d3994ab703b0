//! A visitor that checks the four ledger properties on every state of an
//! exhaustive schedule search.

use std::collections::BTreeSet;

use blockgraph::bank::{BankEvent, BankState, Decision};
use blockgraph::{NodeKind, TxKey};
use blockgraph_sim::explore::Visitor;

use crate::checks::rejection_license;
use crate::dag::Dag;
use crate::ledger::{improper_pair, naive_total_balance};

#[derive(Debug, Default)]
pub struct PropertyVisitor {
    pub max_nodes: usize,
    pub steps: u64,
    pub rejections: u64,
    pub balance_checks: u64,
}

impl PropertyVisitor {
    pub fn new() -> Self {
        PropertyVisitor {
            max_nodes: crate::ledger::DEFAULT_MAX_NODES,
            ..Default::default()
        }
    }

    fn balances_ok(&mut self, b: &BankState) -> Result<(), String> {
        self.balance_checks += 1;
        let sheet = naive_total_balance(b.graph(), self.max_nodes)?;
        match sheet.balances.iter().find(|(_, v)| **v < 0) {
            Some((a, v)) => Err(format!("positive-balance: {}/{} = {v}", a.bank, a.user)),
            None => Ok(()),
        }
    }
}

impl Visitor for PropertyVisitor {
    fn step(&mut self, banks: &[BankState], at: usize, events: &[BankEvent]) -> Result<(), String> {
        self.steps += 1;
        let b = &banks[at];
        let mut accepts = false;
        for e in events {
            match e {
                BankEvent::NodeCreated(n) if n.kind() == NodeKind::Accept => accepts = true,
                BankEvent::NodeInserted(d) => {
                    accepts |= b.graph().get(d).is_some_and(|n| n.kind() == NodeKind::Accept);
                }
                BankEvent::TxRejected(k, cause) => {
                    self.rejections += 1;
                    let known: Vec<TxKey> = b.decisions().keys().copied().collect();
                    if rejection_license(b.graph(), k, &known)?.is_none() {
                        return Err(format!("rejection-restriction: {} rejected as {} without licence", k.id().short(), cause.name()));
                    }
                }
                _ => {}
            }
        }
        if accepts {
            self.balances_ok(b)?;
        }
        Ok(())
    }

    fn leaf(&mut self, banks: &[BankState], submitted: &[(usize, TxKey)]) -> Result<(), String> {
        let accepted = |b: &BankState| -> BTreeSet<TxKey> {
            b.decisions()
                .iter()
                .filter(|(_, d)| **d == Decision::Accepted)
                .map(|(k, _)| *k)
                .collect()
        };
        let first = accepted(&banks[0]);
        if let Some(i) = banks.iter().position(|b| accepted(b) != first) {
            return Err(format!("agreement: bank {i} accepted a different set"));
        }
        for (at, k) in submitted {
            if !banks[*at].decision(k).is_some_and(|d| d.is_terminal()) {
                return Err(format!("termination: {} undecided at bank {at}", k.id().short()));
            }
        }
        for b in banks {
            self.balances_ok(b)?;
        }
        let mut union = Dag::of_graph(banks[0].graph())?;
        for b in &banks[1..] {
            for n in b.graph().nodes().skip(1) {
                union.add(n)?;
            }
        }
        if let Some((x, y)) = improper_pair(&union, &|_| true) {
            return Err(format!(
                "proper-always: {} and {} are not linked",
                union.nodes[x].digest.short(),
                union.nodes[y].digest.short()
            ));
        }
        Ok(())
    }
}
