use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;

use blockgraph::codec::{decode_node, decode_transaction, encode_node, encode_transaction};
use blockgraph::testkit::{Builder, World};
use blockgraph::voting::{threshold_met, voting_power, SharedPower};
use blockgraph::{classify_pair, total_balance, BankId, Blockgraph, Node, Payload, Transaction, TxRelation};

const BANKS: [&str; 3] = ["B1", "B2", "B3"];
const ACCOUNTS: [&str; 4] = ["a@B1", "b@B1", "c@B2", "d@B3"];

fn world() -> World {
    World::new(&[("B1", &[("a", 50), ("b", 20)]), ("B2", &[("c", 40)]), ("B3", &[("d", 30)])])
}

#[derive(Debug, Clone)]
enum Op {
    Start(usize, Vec<(usize, usize, u64, u64)>),
    Update(usize, Vec<usize>),
    Close(usize),
    Accept(usize),
}

fn op() -> impl Strategy<Value = Op> {
    let tx = (0..4usize, 0..4usize, 1..40u64, 1..4u64);
    prop_oneof![
        (0..3usize, prop::collection::vec(tx, 1..3)).prop_map(|(b, t)| Op::Start(b, t)),
        (0..3usize, prop::collection::vec(any::<usize>(), 1..3)).prop_map(|(b, r)| Op::Update(b, r)),
        (0..3usize).prop_map(Op::Close),
        (0..3usize).prop_map(Op::Accept),
    ]
}

fn tx(w: &World, (from, to, amount, seq): (usize, usize, u64, u64)) -> Transaction {
    let to = if to == from { (to + 1) % ACCOUNTS.len() } else { to };
    w.tx(ACCOUNTS[from], ACCOUNTS[to], amount, seq)
}

/// Applies every op the grammar allows and skips the rest.
fn build(ops: &[Op]) -> (Blockgraph, Vec<Arc<Node>>) {
    let mut b = Builder::new(world());
    let mut order = Vec::new();
    for op in ops {
        let (bank, payload) = match op {
            Op::Start(bk, txs) => (*bk, Payload::Start(txs.iter().map(|t| tx(&b.w, *t)).collect())),
            Op::Update(bk, picks) => {
                let own = b.w.bank(BANKS[*bk]);
                let foreign: Vec<_> = b.g.nodes().filter(|n| n.bank().is_some_and(|x| x != own)).collect();
                if foreign.is_empty() {
                    continue;
                }
                let refs: BTreeSet<_> =
                    picks.iter().map(|p| foreign[p % foreign.len()].reference().expect("chain node")).collect();
                (*bk, Payload::Update(refs.into_iter().collect()))
            }
            Op::Close(bk) => (*bk, Payload::Close),
            Op::Accept(bk) => (*bk, Payload::Accept),
        };
        if let Ok(d) = b.try_add(BANKS[bank], payload) {
            order.push(b.g.get(&d).expect("just inserted").clone());
        }
    }
    (b.g, order)
}

fn graph() -> impl Strategy<Value = (Blockgraph, Vec<Arc<Node>>)> {
    prop::collection::vec(op(), 1..40).prop_map(|ops| build(&ops))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn insertion_order_does_not_matter((g, order) in graph(), picks in prop::collection::vec(any::<usize>(), 64)) {
        let mut h = world().genesis();
        let mut pending = order.clone();
        let mut k = 0;
        while !pending.is_empty() {
            let ready: Vec<usize> = (0..pending.len())
                .filter(|&i| h.prepare(&pending[i]).is_ok())
                .collect();
            prop_assert!(!ready.is_empty());
            let i = ready[picks[k % picks.len()] % ready.len()];
            k += 1;
            h.insert_node(pending.remove(i)).unwrap();
        }
        prop_assert_eq!(h.fingerprint(), g.fingerprint());
        prop_assert_eq!(total_balance(&h), total_balance(&g));
    }

    #[test]
    fn subgraphs_nest((g, _) in graph(), i in any::<usize>(), j in any::<usize>()) {
        let all: Vec<_> = g.digests().collect();
        let v = all[i % all.len()];
        let sv = g.subgraph(&v).unwrap();
        let inner: Vec<_> = sv.digests().collect();
        let w = inner[j % inner.len()];
        prop_assert!(g.acknowledges(&v, &w).unwrap());
        prop_assert_eq!(sv.subgraph(&w).unwrap().fingerprint(), g.subgraph(&w).unwrap().fingerprint());
        prop_assert!(g.acknowledges(&v, &v).unwrap());
    }

    #[test]
    fn money_is_conserved((g, _) in graph()) {
        let sheet = total_balance(&g);
        prop_assert_eq!(sheet.total(), g.init().total());
        prop_assert!(sheet.rejected_conflicts.is_disjoint(&sheet.applied));
    }

    #[test]
    fn pair_classification_is_symmetric(a in (0..4usize, 0..4usize, 1..5u64, 1..3u64), b in (0..4usize, 0..4usize, 1..5u64, 1..3u64)) {
        let w = world();
        let (x, y) = (tx(&w, a), tx(&w, b));
        prop_assert_eq!(classify_pair(&x, &y), classify_pair(&y, &x));
        prop_assert_eq!(classify_pair(&x, &x), TxRelation::Identical);
        if x.key().source == y.key().source && x.key().seq == y.key().seq {
            prop_assert_ne!(classify_pair(&x, &y), TxRelation::Unrelated);
        }
    }

    #[test]
    fn codecs_round_trip_and_are_injective((g, order) in graph(), a in (0..4usize, 0..4usize, 1..5u64, 1..3u64), b in (0..4usize, 0..4usize, 1..5u64, 1..3u64)) {
        let w = world();
        let (x, y) = (tx(&w, a), tx(&w, b));
        prop_assert_eq!(decode_transaction(&encode_transaction(&x)).unwrap(), x.clone());
        prop_assert_eq!(encode_transaction(&x) == encode_transaction(&y), x == y);
        let bytes: BTreeSet<Vec<u8>> = order.iter().map(|n| encode_node(n)).collect();
        prop_assert_eq!(bytes.len(), order.len());
        for n in &order {
            prop_assert_eq!(&decode_node(&encode_node(n)).unwrap(), n.as_ref());
        }
        let init = Node::Init(g.init().clone());
        prop_assert_eq!(decode_node(&encode_node(&init)).unwrap(), init);
    }

    #[test]
    fn more_supporters_never_lose_the_threshold((g, _) in graph(), small in prop::collection::btree_set(0..3usize, 0..3), extra in prop::collection::btree_set(0..3usize, 0..3)) {
        let w = world();
        for mode in [SharedPower::Simple, SharedPower::Tiered] {
            let Ok(p) = voting_power(&g, mode) else { continue };
            if p.solo.values().chain(p.shared.values()).any(|v| *v < 0) {
                continue;
            }
            let ids = |s: &BTreeSet<usize>| s.iter().map(|i| w.bank(BANKS[*i])).collect::<BTreeSet<BankId>>();
            let (s, big) = (ids(&small), ids(&small.union(&extra).copied().collect()));
            prop_assert!(p.counted(&s) <= p.counted(&big));
            prop_assert!(!threshold_met(&p, &s) || threshold_met(&p, &big));
            prop_assert_eq!(p.counted(&ids(&(0..3).collect())), p.total);
        }
    }
}
