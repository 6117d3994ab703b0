//! Voting power, support sets and the quorum test.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::balance::{total_balance, BalanceSheet};
use crate::crypto::Digest;
use crate::error::{GraphError, VotingError};
use crate::graph::Blockgraph;
use crate::types::{AccountId, Balance, BankId, NodeKind, TxKey};
use crate::view::View;

/// How in-transit money is split between coalitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SharedPower {
    /// The largest uncertain amount goes to one coalition of the source bank
    /// and every destination bank.
    #[default]
    Simple,
    /// Amounts are layered from the smallest upward; each layer is shared by
    /// the banks that could still receive it.
    Tiered,
}

impl SharedPower {
    pub fn name(self) -> &'static str {
        match self {
            SharedPower::Simple => "simple",
            SharedPower::Tiered => "tiered",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "simple" => Some(SharedPower::Simple),
            "tiered" => Some(SharedPower::Tiered),
            _ => None,
        }
    }
}

pub type Coalition = BTreeSet<BankId>;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PowerDistribution {
    pub solo: BTreeMap<BankId, Balance>,
    pub shared: BTreeMap<Coalition, Balance>,
    pub total: Balance,
}

impl PowerDistribution {
    /// Power available to `supporters`: their solo power plus every
    /// coalition entirely inside the set.
    pub fn counted(&self, supporters: &BTreeSet<BankId>) -> Balance {
        let solo: Balance = supporters.iter().filter_map(|b| self.solo.get(b)).sum();
        let shared: Balance = self
            .shared
            .iter()
            .filter(|(k, _)| k.is_subset(supporters))
            .map(|(_, v)| *v)
            .sum();
        solo + shared
    }

    pub fn report(&self) -> String {
        let mut out = String::new();
        for (b, p) in &self.solo {
            let _ = writeln!(out, "solo {} {}", b, p);
        }
        for (k, p) in &self.shared {
            let names: Vec<String> = k.iter().map(|b| b.to_string()).collect();
            let _ = writeln!(out, "shared {} {}", names.join(","), p);
        }
        let _ = writeln!(out, "total {}", self.total);
        out
    }
}

/// A transaction sitting in an open Start, together with the issuing bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Uncertain {
    pub key: TxKey,
    pub issuer: BankId,
}

pub fn uncertain_transactions<'a>(view: impl Into<View<'a>>) -> BTreeSet<TxKey> {
    let view = view.into();
    let sheet = total_balance(view.clone());
    uncertain_with(&view, &sheet)
        .into_iter()
        .map(|u| u.key)
        .collect()
}

pub(crate) fn uncertain_with(view: &View<'_>, sheet: &BalanceSheet) -> BTreeSet<Uncertain> {
    let g = view.g;
    let mut out = BTreeSet::new();
    for s in view.select(&g.starts) {
        let closed = g
            .accepts_of_start
            .get(&s)
            .is_some_and(|acc| acc.iter().any(|&a| view.contains(a)));
        if closed {
            continue;
        }
        let issuer = g.entry(s).bank().expect("start has a bank");
        for t in g.entry(s).node.transactions() {
            let (src, dst) = (t.source.bank, t.dest.bank);
            if issuer == src || src == dst {
                continue;
            }
            if sheet.has_applied_seq(&t.source, t.seq) {
                continue;
            }
            out.insert(Uncertain { key: t.key(), issuer });
        }
    }
    out
}

pub fn voting_power<'a>(
    view: impl Into<View<'a>>,
    mode: SharedPower,
) -> Result<PowerDistribution, VotingError> {
    let view = view.into();
    let sheet = total_balance(view.clone());
    power_with(&view, &sheet, mode)
}

pub(crate) fn power_with(
    view: &View<'_>,
    sheet: &BalanceSheet,
    mode: SharedPower,
) -> Result<PowerDistribution, VotingError> {
    let mut solo: BTreeMap<BankId, Balance> = BTreeMap::new();
    for (a, b) in &sheet.balances {
        *solo.entry(a.bank).or_default() += b;
    }
    let mut by_user: BTreeMap<AccountId, BTreeSet<TxKey>> = BTreeMap::new();
    for u in uncertain_with(view, sheet) {
        by_user.entry(u.key.source).or_default().insert(u.key);
    }
    let mut shared: BTreeMap<Coalition, Balance> = BTreeMap::new();
    for (source, keys) in by_user {
        let first = keys.iter().next().expect("non-empty").seq;
        if keys.iter().any(|k| k.seq != first) {
            return Err(VotingError::MixedUncertainSeq);
        }
        let max = keys.iter().map(|k| k.amount.0 as Balance).max().unwrap_or(0);
        *solo.entry(source.bank).or_default() -= max;
        match mode {
            SharedPower::Simple => {
                let mut k: Coalition = keys.iter().map(|k| k.dest.bank).collect();
                k.insert(source.bank);
                *shared.entry(k).or_default() += max;
            }
            SharedPower::Tiered => {
                let mut sorted: Vec<&TxKey> = keys.iter().collect();
                sorted.sort_by_key(|k| (k.amount, k.dest));
                let mut floor = 0;
                for (i, k) in sorted.iter().enumerate() {
                    let layer = k.amount.0 as Balance - floor;
                    floor = k.amount.0 as Balance;
                    if layer == 0 {
                        continue;
                    }
                    let mut c: Coalition = sorted[i..].iter().map(|k| k.dest.bank).collect();
                    c.insert(source.bank);
                    *shared.entry(c).or_default() += layer;
                }
            }
        }
    }
    shared.retain(|_, v| *v != 0);
    Ok(PowerDistribution {
        solo,
        shared,
        total: view.g.init().total(),
    })
}

/// Banks owning a node inside `view` that acknowledges `target`.
pub(crate) fn support_within(view: &View<'_>, target: u32) -> BTreeSet<BankId> {
    let g = view.g;
    let mut out = BTreeSet::new();
    for bank in g.banks() {
        let hit = g
            .bank_entries(&bank)
            .iter()
            .any(|&v| view.contains(v) && g.acks(v, target));
        if hit {
            out.insert(bank);
        }
    }
    out
}

/// Support set of a Close (over its Start) or an Accept (over its Close),
/// evaluated inside the terminal's representing graph.
pub fn support_set(g: &Blockgraph, terminal: &Digest) -> Result<BTreeSet<BankId>, GraphError> {
    let i = g.idx(terminal)?;
    let target = match g.entry(i).kind() {
        NodeKind::Close => g.start_of(i),
        NodeKind::Accept => g.close_of(i),
        _ => None,
    }
    .ok_or(GraphError::WrongKind(*terminal))?;
    Ok(support_within(&View::rep(g, i), target))
}

/// Strictly more than two thirds of the total supply.
pub fn threshold_met(dist: &PowerDistribution, supporters: &BTreeSet<BankId>) -> bool {
    3 * dist.counted(supporters) > 2 * dist.total
}
