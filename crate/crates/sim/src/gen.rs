//! Seeded generators: random honest and Byzantine scenarios, and random
//! structurally valid graphs.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use blockgraph::{
    AccountId, BankId, Blockgraph, InitNode, Keypair, Money, Node, NodeKind, Parent, Payload, Phase, Scheme,
    Transaction, UserId,
};

use crate::scenario::{Action, BankSpec, Behavior, DelayPolicy, Limits, Scenario, UserSpec, SCENARIO_SCHEMA};
use crate::world::{bank_key, user_key};

fn base(name: String, seed: u64, delay: DelayPolicy) -> Scenario {
    Scenario {
        schema: SCENARIO_SCHEMA.to_string(),
        name,
        description: String::new(),
        seed,
        scheme: Scheme::Test.name().to_string(),
        shared_power: "simple".to_string(),
        limits: Limits::default(),
        delay,
        banks: Vec::new(),
        users: Vec::new(),
        mutant: None,
    }
}

fn action(at: u64, to: String, amount: u64) -> Action {
    Action {
        at,
        from: None,
        to,
        amount,
        seq: None,
        via: None,
        switch: false,
    }
}

/// Random traffic among `users`. Most transfers are affordable; some
/// overdraw, some go through a foreign bank, and some reuse a seq to
/// collide with an earlier transfer or resubmit it elsewhere.
fn traffic(rng: &mut ChaCha8Rng, sc: &mut Scenario, users: &[usize], count: usize) {
    let banks: Vec<String> = sc.banks.iter().map(|b| b.name.clone()).collect();
    let mut seqs: BTreeMap<usize, u64> = BTreeMap::new();
    for _ in 0..count {
        let u = *users.choose(rng).expect("users");
        let others: Vec<usize> = (0..sc.users.len()).filter(|&v| v != u).collect();
        let v = *others.choose(rng).expect("at least two users");
        let to = format!("{}@{}", sc.users[v].name, sc.users[v].home);
        let bal = sc.users[u].balance.max(1);
        let roll = rng.gen_range(0..100);
        let amount = if roll < 15 {
            bal + rng.gen_range(1..=20)
        } else {
            rng.gen_range(1..=(bal / 3).max(1))
        };
        let mut a = action(rng.gen_range(0..=60), to, amount);
        if rng.gen_bool(0.2) {
            a.via = Some(banks.choose(rng).expect("banks").clone());
        }
        let seq = seqs.entry(u).or_insert(0);
        if *seq > 0 && rng.gen_bool(0.1) {
            // same seq again: a conflict, or an identical resubmission
            let prev = sc.users[u].actions.last().cloned().expect("has a previous action");
            a.seq = Some(*seq);
            a.at = prev.at + rng.gen_range(0..=30);
            if rng.gen_bool(0.5) {
                a.to = prev.to;
                a.amount = prev.amount;
                a.via = Some(banks.choose(rng).expect("banks").clone());
            }
        } else {
            *seq += 1;
            a.seq = Some(*seq);
        }
        sc.users[u].actions.push(a);
    }
}

/// A random honest scenario for property sweeps: 2-5 banks, 2-8 users,
/// 5-40 transactions, uniform delays on even seeds and adversarial ones on
/// odd seeds.
pub fn honest_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000);
    let delay = if seed.is_multiple_of(2) {
        let hi = rng.gen_range(1..=20);
        DelayPolicy::Uniform { lo: 1, hi }
    } else {
        DelayPolicy::Adversarial
    };
    let mut sc = base(format!("honest-{seed}"), seed, delay);
    let nb = rng.gen_range(2..=5);
    for b in 1..=nb {
        sc.banks.push(BankSpec {
            name: format!("B{b}"),
            behavior: Behavior::Honest,
        });
    }
    let nu = rng.gen_range(2..=8);
    for u in 1..=nu {
        let home = format!("B{}", rng.gen_range(1..=nb));
        sc.users.push(UserSpec {
            name: format!("u{u}"),
            home,
            balance: rng.gen_range(10..=100),
            actions: Vec::new(),
        });
    }
    let count = rng.gen_range(5..=40);
    let all: Vec<usize> = (0..nu).collect();
    traffic(&mut rng, &mut sc, &all, count);
    sc
}

/// Which fork a Byzantine scenario stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attack {
    EquivocateStart,
    EquivocateClose,
    EquivocateAccept,
}

impl Attack {
    pub const ALL: [Attack; 3] = [Attack::EquivocateStart, Attack::EquivocateClose, Attack::EquivocateAccept];
}

/// Honest banks plus one equivocating bank `M` whose clients hold at most
/// a quarter of the money, with the honest banks split into two groups.
pub fn byzantine_scenario(seed: u64, attack: Attack) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb42_0000);
    let hi = rng.gen_range(1..=15);
    let mut sc = base(
        format!("{attack:?}-{seed}").to_lowercase(),
        seed,
        DelayPolicy::Uniform { lo: 1, hi },
    );
    let nh = rng.gen_range(3..=4);
    let mut names: Vec<String> = (1..=nh).map(|b| format!("B{b}")).collect();
    for n in &names {
        sc.banks.push(BankSpec {
            name: n.clone(),
            behavior: Behavior::Honest,
        });
    }
    let mut honest_total = 0;
    for (i, n) in names.iter().enumerate() {
        let balance = rng.gen_range(20..=60);
        honest_total += balance;
        sc.users.push(UserSpec {
            name: format!("u{}", i + 1),
            home: n.clone(),
            balance,
            actions: Vec::new(),
        });
    }
    // honest traffic first, so none of it touches M
    let count = rng.gen_range(5..=15);
    traffic(&mut rng, &mut sc, &(0..nh).collect::<Vec<_>>(), count);
    names.shuffle(&mut rng);
    let cut = rng.gen_range(1..nh);
    let groups = vec![names[..cut].to_vec(), names[cut..].to_vec()];
    let behavior = match attack {
        Attack::EquivocateStart => Behavior::EquivocateStart { block: 1, groups },
        Attack::EquivocateClose => Behavior::EquivocateClose { block: 1, groups },
        Attack::EquivocateAccept => Behavior::EquivocateAccept { block: 1, groups },
    };
    sc.banks.push(BankSpec {
        name: "M".into(),
        behavior,
    });
    let mal = (honest_total / 3).max(1);
    let m = sc.users.len();
    sc.users.push(UserSpec {
        name: "mu".into(),
        home: "M".into(),
        balance: mal,
        actions: Vec::new(),
    });
    let spend = (mal * 3 / 4).max(1);
    match attack {
        Attack::EquivocateStart => {
            for (twin, to) in [(0, "u1@B1"), (1, "u2@B2")] {
                let mut a = action(0, to.into(), spend);
                a.seq = Some(1);
                a.via = Some(format!("M#{twin}"));
                sc.users[m].actions.push(a);
            }
        }
        _ => sc.users[m].actions.push(action(0, "u1@B1".into(), spend)),
    }
    sc
}

/// A random graph that satisfies the chain grammar but not necessarily any
/// validity rule: Starts carry random, often conflicting transfers, and
/// Updates reference random foreign nodes.
pub fn random_graph(seed: u64, banks: usize, nodes: usize) -> Blockgraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scheme = Scheme::Test;
    let keys: Vec<Keypair> = (0..banks).map(|b| bank_key(scheme, &format!("R{b}"))).collect();
    let ids: Vec<BankId> = keys.iter().map(|k| BankId(k.public())).collect();
    let users: Vec<(Keypair, AccountId)> = (0..banks * 2)
        .map(|u| {
            let k = user_key(scheme, &format!("r{u}"));
            let acct = AccountId::new(ids[u % banks], UserId(k.public()));
            (k, acct)
        })
        .collect();
    let init = InitNode::new(
        users
            .iter()
            .map(|(_, a)| (*a, Money(rng.gen_range(10..=50))))
            .collect(),
    )
    .expect("distinct accounts");
    let mut g = Blockgraph::genesis(scheme, init);
    let mut heads: Vec<Option<Node>> = vec![None; banks];
    let mut phase: Vec<Phase> = vec![Phase::Idle; banks];
    let mut tries = 0;
    while g.len() < nodes && tries < nodes * 20 {
        tries += 1;
        let b = rng.gen_range(0..banks);
        let (seq, parent) = match &heads[b] {
            None => (1, Parent::Init(g.init_digest())),
            Some(h) => {
                let r = h.reference().expect("chain node");
                (r.seq + 1, Parent::Node(r))
            }
        };
        let foreign: Vec<_> = g
            .nodes()
            .filter(|n| n.bank().is_some_and(|x| x != ids[b]))
            .filter_map(|n| n.reference())
            .collect();
        let roll = rng.gen_range(0..10);
        let payload = match phase[b] {
            _ if roll < 4 && !foreign.is_empty() => {
                let k = rng.gen_range(1..=3.min(foreign.len()));
                let mut refs: Vec<_> = foreign
                    .choose_multiple(&mut rng, k)
                    .copied()
                    .collect();
                refs.sort();
                Payload::Update(refs)
            }
            Phase::Idle => {
                let txs = (0..rng.gen_range(0..=3))
                    .map(|_| {
                        let (k, src) = users.choose(&mut rng).expect("users");
                        let (_, dst) = users.choose(&mut rng).expect("users");
                        Transaction::new(*src, *dst, Money(rng.gen_range(1..=40)), rng.gen_range(1..=3), k)
                            .expect("positive amount and seq")
                    })
                    .collect();
                Payload::Start(txs)
            }
            Phase::Open { .. } => Payload::Close,
            Phase::Closed { .. } => Payload::Accept,
        };
        let node = Node::signed(&keys[b], seq, parent, payload);
        if g.insert_node(node.clone()).is_ok() {
            phase[b] = match (node.kind(), phase[b]) {
                (NodeKind::Start, _) => Phase::Open { start: 0 },
                (NodeKind::Close, _) => Phase::Closed { start: 0, close: 0 },
                (NodeKind::Accept, _) => Phase::Idle,
                (_, p) => p,
            };
            heads[b] = Some(node);
        }
    }
    g
}
