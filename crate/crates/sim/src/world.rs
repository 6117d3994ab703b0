//! Turns a scenario into keys, an Init node and signed submissions.

use std::collections::BTreeMap;

use sha2::{Digest as _, Sha256};

use blockgraph::bank::{BankConfig, Mutant};
use blockgraph::{
    deterministic_keygen, AccountId, BankId, InitNode, Keypair, Money, Scheme, SharedPower, Transaction, UserId,
};

use crate::scenario::{Scenario, ScenarioError, Target};

fn seed_of(label: &str) -> u64 {
    let h = Sha256::digest(label.as_bytes());
    u64::from_be_bytes(h[..8].try_into().expect("8 bytes"))
}

/// Bank keys are a function of the bank name only.
pub fn bank_key(scheme: Scheme, name: &str) -> Keypair {
    deterministic_keygen(scheme, seed_of(&format!("bank:{name}")))
}

pub fn user_key(scheme: Scheme, name: &str) -> Keypair {
    deterministic_keygen(scheme, seed_of(&format!("user:{name}")))
}

#[derive(Debug, Clone)]
pub struct Submission {
    pub at: u64,
    pub user: String,
    pub via: Target,
    pub tx: Transaction,
}

#[derive(Debug, Clone)]
pub struct World {
    pub scheme: Scheme,
    pub shared: SharedPower,
    pub cfg: BankConfig,
    pub names: Vec<String>,
    pub keys: Vec<Keypair>,
    pub ids: Vec<BankId>,
    pub users: BTreeMap<String, Keypair>,
    pub init: InitNode,
    /// Initial power per bank: the money its users hold in Init.
    pub power: Vec<u64>,
    pub submissions: Vec<Submission>,
}

impl World {
    pub fn build(sc: &Scenario) -> Result<Self, ScenarioError> {
        sc.validate()?;
        let scheme = sc.scheme()?;
        let shared = sc.shared()?;
        let names: Vec<String> = sc.banks.iter().map(|b| b.name.clone()).collect();
        let keys: Vec<Keypair> = names.iter().map(|n| bank_key(scheme, n)).collect();
        let ids: Vec<BankId> = keys.iter().map(|k| BankId(k.public())).collect();
        let users: BTreeMap<String, Keypair> = sc
            .users
            .iter()
            .map(|u| (u.name.clone(), user_key(scheme, &u.name)))
            .collect();
        let account = |bank: usize, user: &str| AccountId::new(ids[bank], UserId(users[user].public()));
        let mut power = vec![0u64; names.len()];
        let mut entries = Vec::new();
        for u in sc.users.iter().filter(|u| u.balance > 0) {
            let home = sc.bank_index(&u.home).expect("validated");
            power[home] += u.balance;
            entries.push((account(home, &u.name), Money(u.balance)));
        }
        let init = InitNode::new(entries).expect("validated: distinct funded accounts");
        let mut submissions = Vec::new();
        for a in sc.actions()? {
            let to_user = users
                .get(&a.to.1)
                .map(|k| UserId(k.public()))
                .unwrap_or_else(|| UserId(user_key(scheme, &a.to.1).public()));
            let tx = Transaction::new(
                account(a.from.0, &a.from.1),
                AccountId::new(ids[a.to.0], to_user),
                Money(a.amount),
                a.seq,
                &users[&a.user],
            )
            .expect("validated action");
            submissions.push(Submission {
                at: a.at,
                user: a.user,
                via: a.via,
                tx,
            });
        }
        let cfg = BankConfig {
            batch_max: sc.limits.batch_max.max(1),
            patience: sc.limits.patience.max(1),
            shared,
            strict: true,
            mutant: sc.mutant.as_deref().and_then(Mutant::from_name),
        };
        Ok(World {
            scheme,
            shared,
            cfg,
            names,
            keys,
            ids,
            users,
            init,
            power,
            submissions,
        })
    }

    pub fn index_of(&self, id: &BankId) -> Option<usize> {
        self.ids.iter().position(|b| b == id)
    }

    pub fn total_power(&self) -> u64 {
        self.power.iter().sum()
    }
}
