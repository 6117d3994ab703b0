//! Hand-building graphs with named banks and users.
//!
//! Names map to keys through [`deterministic_keygen`], so the same name always
//! yields the same identity. Accounts are written `user@bank`.

use std::collections::{BTreeMap, HashMap};

use sha2::{Digest as _, Sha256};

use crate::crypto::{deterministic_keygen, Digest, Keypair, Scheme};
use crate::error::InsertError;
use crate::graph::Blockgraph;
use crate::types::{AccountId, BankId, InitNode, Money, Node, NodeRef, Parent, Payload, Transaction, UserId};

fn seed_of(label: &str) -> u64 {
    let h = Sha256::digest(label.as_bytes());
    u64::from_be_bytes(h[..8].try_into().unwrap())
}

pub fn bank_key(scheme: Scheme, name: &str) -> Keypair {
    deterministic_keygen(scheme, seed_of(&format!("bank:{name}")))
}

pub fn user_key(scheme: Scheme, name: &str) -> Keypair {
    deterministic_keygen(scheme, seed_of(&format!("user:{name}")))
}

#[derive(Debug, Clone)]
pub struct World {
    pub scheme: Scheme,
    pub init: InitNode,
    names: BTreeMap<BankId, String>,
}

impl World {
    /// `banks` lists each bank with its funded users.
    pub fn new(banks: &[(&str, &[(&str, u64)])]) -> Self {
        Self::with_scheme(Scheme::Test, banks)
    }

    pub fn with_scheme(scheme: Scheme, banks: &[(&str, &[(&str, u64)])]) -> Self {
        let mut names = BTreeMap::new();
        let mut entries = Vec::new();
        for (bank, users) in banks {
            let id = BankId(bank_key(scheme, bank).public());
            names.insert(id, bank.to_string());
            for (user, amount) in *users {
                let acct = AccountId::new(id, UserId(user_key(scheme, user).public()));
                entries.push((acct, Money(*amount)));
            }
        }
        let init = InitNode::new(entries).expect("distinct funded accounts");
        World {
            scheme,
            init,
            names,
        }
    }

    pub fn bank(&self, name: &str) -> BankId {
        BankId(bank_key(self.scheme, name).public())
    }

    pub fn name_of(&self, id: &BankId) -> String {
        self.names.get(id).cloned().unwrap_or_else(|| id.short())
    }

    /// Parses `user@bank`.
    pub fn account(&self, spec: &str) -> AccountId {
        let (user, bank) = spec.split_once('@').expect("account is user@bank");
        AccountId::new(self.bank(bank), UserId(user_key(self.scheme, user).public()))
    }

    pub fn tx(&self, from: &str, to: &str, amount: u64, seq: u64) -> Transaction {
        let user = from.split_once('@').expect("account is user@bank").0;
        Transaction::new(
            self.account(from),
            self.account(to),
            Money(amount),
            seq,
            &user_key(self.scheme, user),
        )
        .expect("well-formed transaction")
    }

    pub fn genesis(&self) -> Blockgraph {
        Blockgraph::genesis(self.scheme, self.init.clone())
    }
}

/// A graph under construction that tracks each bank's latest node.
#[derive(Debug, Clone)]
pub struct Builder {
    pub w: World,
    pub g: Blockgraph,
    tips: HashMap<BankId, NodeRef>,
}

impl Builder {
    pub fn new(w: World) -> Self {
        let g = w.genesis();
        Builder {
            w,
            g,
            tips: HashMap::new(),
        }
    }

    /// Signs the next node of `bank` on top of its latest node.
    pub fn make(&self, bank: &str, payload: Payload) -> Node {
        let tip = self.tips.get(&self.w.bank(bank)).map(|r| r.hash);
        self.make_at(bank, tip, payload)
    }

    /// Signs a node of `bank` whose parent is `after` (Init when `None`).
    pub fn make_at(&self, bank: &str, after: Option<Digest>, payload: Payload) -> Node {
        let key = bank_key(self.w.scheme, bank);
        let (seq, parent) = match after {
            None => (1, Parent::Init(self.g.init_digest())),
            Some(d) => {
                let r = self.g.get(&d).expect("parent present").reference().expect("chain node");
                (r.seq + 1, Parent::Node(r))
            }
        };
        Node::signed(&key, seq, parent, payload)
    }

    pub fn insert(&mut self, node: Node) -> Result<Digest, InsertError> {
        let r = node.reference();
        let d = self.g.insert_node(node)?;
        if let Some(r) = r {
            self.tips.insert(r.bank, r);
        }
        Ok(d)
    }

    pub fn try_add(&mut self, bank: &str, payload: Payload) -> Result<Digest, InsertError> {
        let n = self.make(bank, payload);
        self.insert(n)
    }

    fn add(&mut self, bank: &str, payload: Payload) -> Digest {
        self.try_add(bank, payload).expect("node inserts")
    }

    pub fn start(&mut self, bank: &str, txs: Vec<Transaction>) -> Digest {
        self.add(bank, Payload::Start(txs))
    }

    pub fn update(&mut self, bank: &str, refs: &[Digest]) -> Digest {
        let refs = refs.iter().map(|d| self.reference(d)).collect();
        self.add(bank, Payload::Update(refs))
    }

    pub fn close(&mut self, bank: &str) -> Digest {
        self.add(bank, Payload::Close)
    }

    pub fn accept(&mut self, bank: &str) -> Digest {
        self.add(bank, Payload::Accept)
    }

    pub fn reference(&self, d: &Digest) -> NodeRef {
        self.g.get(d).expect("node present").reference().expect("chain node")
    }

    /// Start, Close and Accept with no foreign support in between.
    pub fn solo_block(&mut self, bank: &str, txs: Vec<Transaction>) -> (Digest, Digest, Digest) {
        let s = self.start(bank, txs);
        let c = self.close(bank);
        let a = self.accept(bank);
        (s, c, a)
    }
}
