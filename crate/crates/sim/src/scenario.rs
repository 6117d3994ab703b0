//! Scenario files: TOML documents tagged with [`SCENARIO_SCHEMA`].
//!
//! ```toml
//! schema = "blockgraph-scenario/1"
//! name = "two_banks"
//! seed = 1
//!
//! [delay]
//! policy = "uniform"
//! lo = 1
//! hi = 5
//!
//! [[banks]]
//! name = "B1"
//!
//! [[banks]]
//! name = "B2"
//!
//! [[users]]
//! name = "alice"
//! home = "B1"
//! balance = 60
//!
//! [[users.actions]]
//! at = 0
//! to = "bob@B2"
//! amount = 20
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use blockgraph::{Digest, Scheme, SharedPower};

pub const SCENARIO_SCHEMA: &str = "blockgraph-scenario/1";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("not a scenario file: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("unsupported schema {found:?}, expected {SCENARIO_SCHEMA:?}")]
    Schema { found: String },
    #[error("unknown signature scheme {0:?}")]
    Scheme(String),
    #[error("unknown shared power mode {0:?}")]
    SharedPower(String),
    #[error("unknown mutant {0:?}")]
    Mutant(String),
    #[error("scenario has no banks")]
    NoBanks,
    #[error("name {0:?} is used twice")]
    Duplicate(String),
    #[error("unknown bank {0:?}")]
    UnknownBank(String),
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("bad account {0:?}, expected user or user@bank")]
    BadAccount(String),
    #[error("bad delivery target {0:?}")]
    BadTarget(String),
    #[error("uniform delays need 1 <= lo <= hi, got {lo}..={hi}")]
    BadDelay { lo: u64, hi: u64 },
    #[error("bank {bank}: {msg}")]
    Behavior { bank: String, msg: String },
    #[error("action {index} of {user}: {msg}")]
    Action { user: String, index: usize, msg: String },
    #[error("no funded accounts")]
    NoMoney,
}

fn default_seed() -> u64 {
    1
}

fn default_scheme() -> String {
    Scheme::Test.name().to_string()
}

fn default_shared() -> String {
    SharedPower::Simple.name().to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default = "default_shared")]
    pub shared_power: String,
    #[serde(default)]
    pub limits: Limits,
    #[serde(default)]
    pub delay: DelayPolicy,
    pub banks: Vec<BankSpec>,
    #[serde(default)]
    pub users: Vec<UserSpec>,
    /// A deliberate engine bug, for testing the oracles.
    #[doc(hidden)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutant: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Limits {
    /// Trace events after which the run stops and is marked truncated.
    pub max_events: u64,
    pub patience: u32,
    pub batch_max: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_events: 2_000_000,
            patience: 8,
            batch_max: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DelayPolicy {
    /// Every message and wake-up takes a delay drawn uniformly from `lo..=hi`.
    Uniform { lo: u64, hi: u64 },
    /// Delivery order is chosen to starve quorums: pending messages for the
    /// bank with the least initial power go first, oldest first.
    Adversarial,
    /// Delay `default` everywhere except on the listed links.
    Fixed {
        #[serde(default = "one")]
        default: u64,
        #[serde(default)]
        links: Vec<LinkDelay>,
    },
}

fn one() -> u64 {
    1
}

impl Default for DelayPolicy {
    fn default() -> Self {
        DelayPolicy::Uniform { lo: 1, hi: 10 }
    }
}

/// `from` and `to` are bank names or `*`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDelay {
    pub from: String,
    pub to: String,
    pub delay: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankSpec {
    pub name: String,
    #[serde(default)]
    pub behavior: Behavior,
}

/// What a bank does. Everything except `honest` marks the bank Byzantine,
/// and the oracle ignores its decisions.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Behavior {
    #[default]
    Honest,
    /// Two or more Starts with the same seq, one per peer group. Each twin
    /// gets the transactions addressed to `BANK#i`.
    EquivocateStart { block: u64, groups: Vec<Vec<String>> },
    /// Forks after the Start of `block`, so the twins close it on
    /// different chains.
    EquivocateClose { block: u64, groups: Vec<Vec<String>> },
    /// Forks after the Close of `block`: the twins accept one Close twice.
    EquivocateAccept { block: u64, groups: Vec<Vec<String>> },
    /// Never sends anything to the listed banks.
    Withhold { targets: Vec<String> },
    /// Goes silent for good after creating `after_nodes` nodes.
    Crash { after_nodes: u64 },
}

impl Behavior {
    pub fn is_honest(&self) -> bool {
        matches!(self, Behavior::Honest)
    }

    pub fn groups(&self) -> Option<(u64, &[Vec<String>])> {
        match self {
            Behavior::EquivocateStart { block, groups }
            | Behavior::EquivocateClose { block, groups }
            | Behavior::EquivocateAccept { block, groups } => Some((*block, groups)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub name: String,
    pub home: String,
    #[serde(default)]
    pub balance: u64,
    #[serde(default)]
    pub actions: Vec<Action>,
}

/// One signed transfer handed to a bank at logical time `at`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Action {
    #[serde(default)]
    pub at: u64,
    /// Source account; defaults to the user at their current home bank.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<String>,
    /// `user` (at that user's home bank) or `user@bank`.
    pub to: String,
    pub amount: u64,
    /// Defaults to one past the last seq used for the source account.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    /// Receiving bank, or `BANK#i` for one twin of an equivocating bank.
    /// Defaults to the source account's bank.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub via: Option<String>,
    /// After this action the user's home becomes the destination bank.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub switch: bool,
}

/// Where a submission is delivered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Target {
    pub bank: usize,
    pub twin: Option<usize>,
}

/// A submission with every default filled in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedAction {
    pub at: u64,
    pub user: String,
    pub from: (usize, String),
    pub to: (usize, String),
    pub amount: u64,
    pub seq: u64,
    pub via: Target,
}

impl Scenario {
    /// Parses and validates a scenario document.
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let raw: toml::Value = toml::from_str(text)?;
        let found = raw.get("schema").and_then(|s| s.as_str()).unwrap_or("");
        if found != SCENARIO_SCHEMA {
            return Err(ScenarioError::Schema {
                found: found.to_string(),
            });
        }
        let sc: Scenario = raw.try_into()?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenarios always serialize")
    }

    /// Hash of the canonical JSON form, so formatting does not matter.
    pub fn digest(&self) -> Digest {
        let json = serde_json::to_vec(self).expect("scenarios always serialize");
        Digest(Sha256::digest(&json).into())
    }

    pub fn scheme(&self) -> Result<Scheme, ScenarioError> {
        Scheme::from_name(&self.scheme).ok_or_else(|| ScenarioError::Scheme(self.scheme.clone()))
    }

    pub fn shared(&self) -> Result<SharedPower, ScenarioError> {
        SharedPower::from_name(&self.shared_power)
            .ok_or_else(|| ScenarioError::SharedPower(self.shared_power.clone()))
    }

    pub fn bank_index(&self, name: &str) -> Option<usize> {
        self.banks.iter().position(|b| b.name == name)
    }

    pub fn honest(&self) -> Vec<bool> {
        self.banks.iter().map(|b| b.behavior.is_honest()).collect()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.scheme()?;
        self.shared()?;
        if let Some(m) = &self.mutant {
            blockgraph::bank::Mutant::from_name(m).ok_or_else(|| ScenarioError::Mutant(m.clone()))?;
        }
        if self.banks.is_empty() {
            return Err(ScenarioError::NoBanks);
        }
        let mut seen = BTreeSet::new();
        for b in &self.banks {
            if b.name.is_empty() || b.name.contains(['@', '#', '*']) || !seen.insert(&b.name) {
                return Err(ScenarioError::Duplicate(b.name.clone()));
            }
        }
        let mut seen = BTreeSet::new();
        for u in &self.users {
            if u.name.is_empty() || u.name.contains('@') || !seen.insert(&u.name) {
                return Err(ScenarioError::Duplicate(u.name.clone()));
            }
            self.bank(&u.home)?;
        }
        match &self.delay {
            DelayPolicy::Uniform { lo, hi } if *lo == 0 || lo > hi => {
                return Err(ScenarioError::BadDelay { lo: *lo, hi: *hi })
            }
            DelayPolicy::Fixed { default, links } => {
                if *default == 0 || links.iter().any(|l| l.delay == 0) {
                    return Err(ScenarioError::BadDelay { lo: 0, hi: 0 });
                }
                for l in links {
                    for end in [&l.from, &l.to] {
                        if end != "*" {
                            self.bank(end)?;
                        }
                    }
                }
            }
            _ => {}
        }
        for b in &self.banks {
            self.validate_behavior(b)?;
        }
        if !self.users.iter().any(|u| u.balance > 0) {
            return Err(ScenarioError::NoMoney);
        }
        self.actions()?;
        Ok(())
    }

    fn bank(&self, name: &str) -> Result<usize, ScenarioError> {
        self.bank_index(name)
            .ok_or_else(|| ScenarioError::UnknownBank(name.to_string()))
    }

    fn validate_behavior(&self, b: &BankSpec) -> Result<(), ScenarioError> {
        let err = |msg: &str| ScenarioError::Behavior {
            bank: b.name.clone(),
            msg: msg.to_string(),
        };
        match &b.behavior {
            Behavior::Honest => {}
            Behavior::Withhold { targets } => {
                for t in targets {
                    self.bank(t)?;
                }
            }
            Behavior::Crash { .. } => {}
            other => {
                let (block, groups) = other.groups().expect("equivocation");
                if block == 0 {
                    return Err(err("blocks are numbered from 1"));
                }
                if groups.len() < 2 {
                    return Err(err("needs at least two peer groups"));
                }
                for name in groups.iter().flatten() {
                    if self.bank(name)? == self.bank(&b.name)? {
                        return Err(err("a bank cannot be its own peer"));
                    }
                }
            }
        }
        Ok(())
    }

    fn target(&self, via: &str) -> Result<Target, ScenarioError> {
        let bad = || ScenarioError::BadTarget(via.to_string());
        let (name, twin) = match via.split_once('#') {
            None => (via, None),
            Some((n, i)) => (n, Some(i.parse::<usize>().map_err(|_| bad())?)),
        };
        let bank = self.bank(name)?;
        if let Some(i) = twin {
            match self.banks[bank].behavior.groups() {
                Some((_, groups)) if i < groups.len() => {}
                _ => return Err(bad()),
            }
        }
        Ok(Target { bank, twin })
    }

    /// Resolves `user` or `user@bank` given the users' current homes.
    fn account(&self, s: &str, homes: &BTreeMap<&str, usize>) -> Result<(usize, String), ScenarioError> {
        match s.split_once('@') {
            Some((u, b)) if !u.is_empty() => Ok((self.bank(b)?, u.to_string())),
            Some(_) => Err(ScenarioError::BadAccount(s.to_string())),
            None => homes
                .get(s)
                .map(|&b| (b, s.to_string()))
                .ok_or_else(|| ScenarioError::UnknownUser(s.to_string())),
        }
    }

    /// Every submission in schedule order (by time, then by user order).
    pub fn actions(&self) -> Result<Vec<ResolvedAction>, ScenarioError> {
        let mut homes: BTreeMap<&str, usize> = BTreeMap::new();
        for u in &self.users {
            homes.insert(&u.name, self.bank(&u.home)?);
        }
        let mut next_seq: BTreeMap<(usize, String), u64> = BTreeMap::new();
        let mut out = Vec::new();
        for u in &self.users {
            let mut home = homes[u.name.as_str()];
            for (index, a) in u.actions.iter().enumerate() {
                let err = |msg: String| ScenarioError::Action {
                    user: u.name.clone(),
                    index,
                    msg,
                };
                let from = match &a.from {
                    None => (home, u.name.clone()),
                    Some(f) => self.account(f, &homes)?,
                };
                if from.1 != u.name {
                    return Err(err(format!("{} cannot sign for {}", u.name, from.1)));
                }
                let to = self.account(&a.to, &homes)?;
                if a.amount == 0 {
                    return Err(err("amount must be positive".into()));
                }
                let counter = next_seq.entry(from.clone()).or_insert(0);
                let seq = a.seq.unwrap_or(*counter + 1);
                if seq == 0 {
                    return Err(err("seq starts at 1".into()));
                }
                *counter = (*counter).max(seq);
                let via = match &a.via {
                    None => Target {
                        bank: from.0,
                        twin: None,
                    },
                    Some(v) => self.target(v)?,
                };
                if a.switch {
                    home = to.0;
                }
                out.push(ResolvedAction {
                    at: a.at,
                    user: u.name.clone(),
                    from,
                    to,
                    amount: a.amount,
                    seq,
                    via,
                });
            }
        }
        out.sort_by_key(|a| a.at);
        Ok(out)
    }
}
