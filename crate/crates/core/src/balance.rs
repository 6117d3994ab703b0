//! Which transactions a graph applies, and the balances that result.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::types::{AccountId, Balance, TxKey};
use crate::view::View;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BalanceSheet {
    pub balances: BTreeMap<AccountId, Balance>,
    pub applied: BTreeSet<TxKey>,
    /// Transactions of accepted blocks that were blocked by a conflict and
    /// are not applied through any other block.
    pub rejected_conflicts: BTreeSet<TxKey>,
}

impl BalanceSheet {
    pub fn balance(&self, account: &AccountId) -> Balance {
        self.balances.get(account).copied().unwrap_or(0)
    }

    pub fn total(&self) -> Balance {
        self.balances.values().sum()
    }

    pub fn is_non_negative(&self) -> bool {
        self.balances.values().all(|&b| b >= 0)
    }

    /// Applied transactions of one source account, keyed by seq. Improper
    /// graphs can apply two transactions with one seq, hence the vector.
    pub fn applied_of(&self, source: &AccountId) -> BTreeMap<u64, Vec<TxKey>> {
        let mut out: BTreeMap<u64, Vec<TxKey>> = BTreeMap::new();
        for k in self.applied.iter().filter(|k| k.source == *source) {
            out.entry(k.seq).or_default().push(*k);
        }
        out
    }

    pub fn has_applied_seq(&self, source: &AccountId, seq: u64) -> bool {
        self.applied
            .iter()
            .any(|k| k.source == *source && k.seq == seq)
    }

    /// One `account balance` line per account, sorted by account.
    pub fn report(&self) -> String {
        let mut out = String::new();
        for (a, b) in &self.balances {
            let _ = writeln!(out, "{}/{} {}", a.bank, a.user, b);
        }
        out
    }
}

/// Applied and conflict-rejected transactions of the view.
pub fn applied_transactions<'a>(view: impl Into<View<'a>>) -> (BTreeSet<TxKey>, BTreeSet<TxKey>) {
    let view = view.into();
    let g = view.g;
    let mut applied = BTreeSet::new();
    let mut blocked = BTreeSet::new();
    let mut seen = BTreeSet::new();
    for a in view.select(&g.accepts) {
        let (Some(close), Some(start)) = (g.close_of(a), g.start_of(a)) else {
            continue;
        };
        if !seen.insert(close) {
            continue;
        }
        let mask = &g.entry(close).applied;
        for (t, &ok) in g.entry(start).node.transactions().iter().zip(mask) {
            if ok {
                applied.insert(t.key());
            } else {
                blocked.insert(t.key());
            }
        }
    }
    let rejected = blocked.difference(&applied).copied().collect();
    (applied, rejected)
}

/// Init distribution plus every applied transfer.
pub fn total_balance<'a>(view: impl Into<View<'a>>) -> BalanceSheet {
    let view = view.into();
    let (applied, rejected_conflicts) = applied_transactions(view.clone());
    let mut balances: BTreeMap<AccountId, Balance> = view
        .g
        .init()
        .entries()
        .iter()
        .map(|(a, m)| (*a, m.0 as Balance))
        .collect();
    for k in &applied {
        *balances.entry(k.source).or_default() -= k.amount.0 as Balance;
        *balances.entry(k.dest).or_default() += k.amount.0 as Balance;
    }
    BalanceSheet {
        balances,
        applied,
        rejected_conflicts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{Builder, World};
    use crate::view::View;

    fn alice() -> Builder {
        Builder::new(World::new(&[
            ("B1", &[("alice", 40)]),
            ("B2", &[("bob", 1)]),
            ("B3", &[("charlie", 1)]),
        ]))
    }

    #[test]
    fn genesis_balances_are_init() {
        let b = alice();
        let sheet = total_balance(&b.g);
        assert_eq!(sheet.balance(&b.w.account("alice@B1")), 40);
        assert_eq!(sheet.total(), 42);
        assert!(sheet.applied.is_empty());
    }

    #[test]
    fn accepted_block_moves_money() {
        let w = World::new(&[("B1", &[("u1", 40)])]);
        let mut b = Builder::new(w);
        let t = b.w.tx("u1@B1", "u2@B2", 20, 1);
        b.solo_block("B1", vec![t.clone()]);
        let sheet = total_balance(&b.g);
        assert_eq!(sheet.balance(&b.w.account("u1@B1")), 20);
        assert_eq!(sheet.balance(&b.w.account("u2@B2")), 20);
        assert_eq!(sheet.applied.len(), 1);
    }

    #[test]
    fn closed_but_unaccepted_block_applies_nothing() {
        let w = World::new(&[("B1", &[("u1", 40)])]);
        let mut b = Builder::new(w);
        let t = b.w.tx("u1@B1", "u2@B2", 20, 1);
        b.start("B1", vec![t]);
        b.close("B1");
        assert!(total_balance(&b.g).applied.is_empty());
    }

    /// Two conflicting blocks where each Close sees the other's Start.
    #[test]
    fn mutual_acknowledgment_rejects_both() {
        let mut b = alice();
        let t20 = b.w.tx("alice@B1", "bob@B2", 20, 1);
        let t30 = b.w.tx("alice@B1", "charlie@B3", 30, 1);
        let s1 = b.start("B1", vec![t20.clone()]);
        let s2 = b.start("B2", vec![t30.clone()]);
        b.update("B1", &[s2]);
        b.update("B2", &[s1]);
        b.close("B1");
        b.close("B2");
        b.accept("B1");
        b.accept("B2");
        let sheet = total_balance(&b.g);
        assert!(sheet.applied.is_empty());
        assert_eq!(sheet.rejected_conflicts.len(), 2);
        assert_eq!(sheet.balance(&b.w.account("alice@B1")), 40);
    }

    #[test]
    fn one_way_acknowledgment_applies_the_earlier() {
        let mut b = alice();
        let t20 = b.w.tx("alice@B1", "bob@B2", 20, 1);
        let t30 = b.w.tx("alice@B1", "charlie@B3", 30, 1);
        let s2 = b.start("B2", vec![t30.clone()]);
        b.close("B2");
        b.accept("B2");
        b.start("B1", vec![t20.clone()]);
        b.update("B1", &[s2]);
        b.close("B1");
        b.accept("B1");
        let sheet = total_balance(&b.g);
        assert_eq!(sheet.applied, [t30.key()].into());
        assert_eq!(sheet.rejected_conflicts, [t20.key()].into());
        assert_eq!(sheet.balance(&b.w.account("alice@B1")), 10);
        assert_eq!(sheet.balance(&b.w.account("charlie@B3")), 31);
    }

    #[test]
    fn identical_copies_apply_once() {
        let mut b = alice();
        let t = b.w.tx("alice@B1", "bob@B2", 20, 1);
        b.solo_block("B1", vec![t.clone()]);
        b.solo_block("B2", vec![t.clone()]);
        let sheet = total_balance(&b.g);
        assert_eq!(sheet.applied.len(), 1);
        assert_eq!(sheet.balance(&b.w.account("alice@B1")), 20);
        assert_eq!(sheet.balance(&b.w.account("bob@B2")), 21);
    }

    #[test]
    fn improper_graph_can_go_negative() {
        // Neither Close sees the other block, so both spends go through.
        let mut b = alice();
        let t35 = b.w.tx("alice@B1", "bob@B2", 35, 1);
        let t30 = b.w.tx("alice@B1", "charlie@B3", 30, 1);
        b.solo_block("B1", vec![t35]);
        b.solo_block("B2", vec![t30]);
        let sheet = total_balance(&b.g);
        assert_eq!(sheet.applied.len(), 2);
        assert_eq!(sheet.balance(&b.w.account("alice@B1")), -25);
        assert!(!sheet.is_non_negative());
        assert_eq!(sheet.total(), 42);
    }

    #[test]
    fn subgraph_view_only_sees_its_ancestors() {
        let w = World::new(&[("B1", &[("u1", 40)])]);
        let mut b = Builder::new(w);
        let t = b.w.tx("u1@B1", "u2@B2", 20, 1);
        let (_, _, a) = b.solo_block("B1", vec![t]);
        let after = b.start("B1", vec![]);
        let before = View::subgraph(&b.g, &a).unwrap();
        assert!(total_balance(before).applied.is_empty());
        let at = View::subgraph(&b.g, &after).unwrap();
        assert_eq!(total_balance(at).applied.len(), 1);
    }
}
