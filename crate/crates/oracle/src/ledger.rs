//! Balances, voting power and properness computed directly from the
//! definitions over a [`Dag`] and a membership predicate.

use std::collections::{BTreeMap, BTreeSet};

use blockgraph::{AccountId, BalanceSheet, BankId, Blockgraph, NodeKind, TxKey};

use crate::dag::Dag;

/// Which transactions of a Close's block survive: a transaction is
/// blocked when any Start the Close acknowledges holds a different
/// transaction with the same source and seq.
pub fn close_verdicts(dag: &Dag, close: usize) -> &[(TxKey, bool)] {
    dag.verdicts[close].get_or_init(|| scan_close(dag, close))
}

fn scan_close(dag: &Dag, close: usize) -> Vec<(TxKey, bool)> {
    let Some(start) = dag.start_of(close) else {
        return Vec::new();
    };
    let starts: Vec<usize> = (0..=close)
        .filter(|&s| dag.nodes[s].kind == NodeKind::Start && dag.acks(close, s))
        .collect();
    dag.nodes[start]
        .txs
        .iter()
        .map(|t| {
            let blocked = starts.iter().any(|&s| {
                dag.nodes[s].txs.iter().any(|u| {
                    u.source == t.source && u.seq == t.seq && (u.dest != t.dest || u.amount != t.amount)
                })
            });
            (*t, !blocked)
        })
        .collect()
}

/// Applied and conflict-rejected transactions among members, each Close
/// counted once however many Accepts it has.
pub fn applied(dag: &Dag, member: &dyn Fn(usize) -> bool) -> (BTreeSet<TxKey>, BTreeSet<TxKey>) {
    let closes: BTreeSet<usize> = (0..dag.len())
        .filter(|&a| member(a) && dag.nodes[a].kind == NodeKind::Accept)
        .filter_map(|a| dag.close_of(a))
        .collect();
    let mut ok = BTreeSet::new();
    let mut blocked = BTreeSet::new();
    for c in closes {
        for &(t, v) in close_verdicts(dag, c) {
            if v {
                ok.insert(t);
            } else {
                blocked.insert(t);
            }
        }
    }
    let rejected = blocked.difference(&ok).copied().collect();
    (ok, rejected)
}

pub fn balances(init: &[(AccountId, i128)], applied: &BTreeSet<TxKey>) -> BTreeMap<AccountId, i128> {
    let mut b: BTreeMap<AccountId, i128> = init.iter().copied().collect();
    for t in applied {
        *b.entry(t.source).or_default() -= t.amount.0 as i128;
        *b.entry(t.dest).or_default() += t.amount.0 as i128;
    }
    b
}

/// Default size limit for [`naive_total_balance`].
pub const DEFAULT_MAX_NODES: usize = 500;

/// Total balance of `g` recomputed from scratch with a reachability matrix
/// and a pairwise conflict scan.
pub fn naive_total_balance(g: &Blockgraph, max_nodes: usize) -> Result<BalanceSheet, String> {
    if g.len() > max_nodes {
        return Err(format!("graph has {} nodes, limit is {max_nodes}", g.len()));
    }
    let dag = Dag::of_graph(g)?;
    let (ok, rejected) = applied(&dag, &|_| true);
    Ok(BalanceSheet {
        balances: balances(&dag.init, &ok),
        applied: ok,
        rejected_conflicts: rejected,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Power {
    pub solo: BTreeMap<BankId, i128>,
    pub shared: BTreeMap<BTreeSet<BankId>, i128>,
    pub total: i128,
}

impl Power {
    /// Power usable by `banks` alone: their solo power plus every
    /// coalition they fully contain.
    pub fn of(&self, banks: &BTreeSet<BankId>) -> i128 {
        let solo: i128 = self.solo.iter().filter(|(b, _)| banks.contains(b)).map(|(_, p)| p).sum();
        let shared: i128 = self
            .shared
            .iter()
            .filter(|(c, _)| c.is_subset(banks))
            .map(|(_, p)| p)
            .sum();
        solo + shared
    }
}

/// Voting power over the members: client balances per bank, with money of
/// uncertain transfers moved to the coalition of source and destination
/// banks. `tiered` splits the in-transit money by amount levels instead of
/// moving only the largest amount.
pub fn power(dag: &Dag, member: &dyn Fn(usize) -> bool, tiered: bool) -> Power {
    let (ok, _) = applied(dag, member);
    let bal = balances(&dag.init, &ok);
    let mut solo: BTreeMap<BankId, i128> = BTreeMap::new();
    for (a, v) in &bal {
        *solo.entry(a.bank).or_default() += v;
    }
    let accepted_starts: BTreeSet<usize> = (0..dag.len())
        .filter(|&a| member(a) && dag.nodes[a].kind == NodeKind::Accept)
        .filter_map(|a| dag.start_of(a))
        .collect();
    let mut pending: BTreeMap<AccountId, Vec<(u64, BankId)>> = BTreeMap::new();
    for s in (0..dag.len()).filter(|&s| member(s) && dag.nodes[s].kind == NodeKind::Start) {
        if accepted_starts.contains(&s) {
            continue;
        }
        let issuer = dag.nodes[s].bank;
        for t in &dag.nodes[s].txs {
            let settled = ok.iter().any(|k| k.source == t.source && k.seq == t.seq);
            if Some(t.source.bank) != issuer && t.source.bank != t.dest.bank && !settled {
                let list = pending.entry(t.source).or_default();
                if !list.contains(&(t.amount.0, t.dest.bank)) {
                    list.push((t.amount.0, t.dest.bank));
                }
            }
        }
    }
    let mut shared: BTreeMap<BTreeSet<BankId>, i128> = BTreeMap::new();
    for (src, mut list) in pending {
        list.sort();
        let coalition = |from: usize| -> BTreeSet<BankId> {
            std::iter::once(src.bank).chain(list[from..].iter().map(|(_, b)| *b)).collect()
        };
        if tiered {
            let mut prev = 0u64;
            for (k, (amount, _)) in list.iter().enumerate() {
                let step = amount - prev;
                if step > 0 {
                    *shared.entry(coalition(k)).or_default() += step as i128;
                    *solo.entry(src.bank).or_default() -= step as i128;
                }
                prev = *amount;
            }
        } else {
            let max = list.last().expect("non-empty").0 as i128;
            *shared.entry(coalition(0)).or_default() += max;
            *solo.entry(src.bank).or_default() -= max;
        }
    }
    shared.retain(|_, v| *v != 0);
    Power {
        solo,
        shared,
        total: dag.init.iter().map(|(_, v)| v).sum(),
    }
}

/// The first offending pair, if the members are not proper: two Closes
/// neither of which acknowledges the other's Start, or two Accepts neither
/// of which acknowledges the other's Close.
pub fn improper_pair(dag: &Dag, member: &dyn Fn(usize) -> bool) -> Option<(usize, usize)> {
    let of = |kind: NodeKind| -> Vec<usize> {
        (0..dag.len())
            .filter(|&i| member(i) && dag.nodes[i].kind == kind)
            .collect()
    };
    let linked = |a: usize, b: usize, target: &dyn Fn(usize) -> Option<usize>| {
        let (ta, tb) = (target(a), target(b));
        tb.is_some_and(|t| dag.acks(a, t)) || ta.is_some_and(|t| dag.acks(b, t))
    };
    for (list, target) in [
        (of(NodeKind::Close), &(|c| dag.start_of(c)) as &dyn Fn(usize) -> Option<usize>),
        (of(NodeKind::Accept), &|a| dag.close_of(a)),
    ] {
        for (x, &a) in list.iter().enumerate() {
            for &b in &list[x + 1..] {
                if !linked(a, b, target) {
                    return Some((a, b));
                }
            }
        }
    }
    None
}

/// Banks with two distinct nodes at one seq among the members.
pub fn equivocators(dag: &Dag, member: &dyn Fn(usize) -> bool) -> BTreeSet<BankId> {
    let mut seen: BTreeMap<(BankId, u64), usize> = BTreeMap::new();
    let mut out = BTreeSet::new();
    for i in (0..dag.len()).filter(|&i| member(i)) {
        let n = &dag.nodes[i];
        if let Some(b) = n.bank {
            if let Some(&j) = seen.get(&(b, n.seq)) {
                if j != i {
                    out.insert(b);
                }
            } else {
                seen.insert((b, n.seq), i);
            }
        }
    }
    out
}
