//! Exhaustive exploration of delivery orders for tiny honest scenarios.
//!
//! Every pending submission, every pending wake-up and every message in
//! flight is a choice; with `fifo` only the oldest message on each link
//! is. States are deduplicated by fingerprint, so each
//! distinct state is checked once while the number of complete schedules
//! is still counted exactly.

use std::collections::HashMap;

use sha2::{Digest as _, Sha256};

use blockgraph::bank::{BankEvent, BankState, Message, Recipient};
use blockgraph::{Digest, TxKey};

use crate::scenario::{Scenario, ScenarioError};
use crate::world::World;

#[derive(Debug, Clone, Copy)]
pub struct ExploreConfig {
    /// Longest schedule explored; longer ones are cut and counted.
    pub max_depth: usize,
    /// Stop after this many distinct states.
    pub max_states: usize,
    /// Deliver bank-to-bank messages in order on each link. User
    /// submissions are never ordered.
    pub fifo: bool,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            max_depth: 400,
            max_states: 1_000_000,
            fifo: true,
        }
    }
}

/// Hooks for property checks. Errors abort the search and are reported
/// with the schedule that produced them.
pub trait Visitor {
    /// Called after bank `at` reacted to one input.
    fn step(&mut self, banks: &[BankState], at: usize, events: &[BankEvent]) -> Result<(), String>;
    /// Called on every state with nothing left to deliver. `submitted`
    /// lists which bank received which transaction.
    fn leaf(&mut self, banks: &[BankState], submitted: &[(usize, TxKey)]) -> Result<(), String>;
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExploreReport {
    pub states: usize,
    pub leaves: usize,
    /// Complete schedules, counting each path through the state graph.
    pub schedules: u128,
    pub max_in_flight: usize,
    pub max_depth_seen: usize,
    /// Schedules cut by the depth limit, or true if the state budget ran out.
    pub cut: usize,
    pub exhausted_budget: bool,
    pub violation: Option<(Vec<String>, String)>,
}

#[derive(Debug, Clone)]
struct Flight {
    to: usize,
    from: Option<usize>,
    msg: Message,
}

impl Flight {
    fn key(&self) -> Vec<u8> {
        let mut v = vec![self.to as u8, self.from.map_or(255, |f| f as u8)];
        v.extend_from_slice(self.msg.kind().as_bytes());
        for d in self.msg.digests() {
            v.extend_from_slice(&d.0);
        }
        v
    }
}

#[derive(Debug, Clone)]
struct State {
    banks: Vec<BankState>,
    flights: Vec<Flight>,
    awake: Vec<bool>,
}

impl State {
    fn fingerprint(&self, fifo: bool) -> Digest {
        let mut h = Sha256::new();
        for b in &self.banks {
            h.update(b.fingerprint().0);
        }
        let mut keys: Vec<Vec<u8>> = self.flights.iter().map(Flight::key).collect();
        if fifo {
            // per-link order matters; the stable sort keeps it
            keys.sort_by(|a, b| a[..2].cmp(&b[..2]));
        } else {
            keys.sort();
        }
        for k in keys {
            h.update((k.len() as u32).to_be_bytes());
            h.update(k);
        }
        for &w in &self.awake {
            h.update([w as u8]);
        }
        Digest(h.finalize().into())
    }

    /// Distinct choices: deliveries (identical duplicates collapse, and only
    /// the oldest message per link under FIFO) then wake-ups.
    fn choices(&self, fifo: bool) -> Vec<Choice> {
        let mut seen: Vec<Vec<u8>> = Vec::new();
        let mut links: Vec<(usize, usize)> = Vec::new();
        let mut out = Vec::new();
        for (i, f) in self.flights.iter().enumerate() {
            if let (true, Some(from)) = (fifo, f.from) {
                if links.contains(&(from, f.to)) {
                    continue;
                }
                links.push((from, f.to));
            }
            let k = f.key();
            if !seen.contains(&k) {
                seen.push(k);
                out.push(Choice::Deliver(i));
            }
        }
        for (b, &w) in self.awake.iter().enumerate() {
            if w {
                out.push(Choice::Wake(b));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
enum Choice {
    Deliver(usize),
    Wake(usize),
}

struct Search<'a, V: Visitor> {
    world: &'a World,
    cfg: ExploreConfig,
    visitor: &'a mut V,
    submitted: Vec<(usize, TxKey)>,
    memo: HashMap<Digest, u128>,
    path: Vec<String>,
    report: ExploreReport,
}

/// Explores every schedule of an all-honest scenario. Submission times are
/// ignored: all submissions start in flight.
pub fn explore<V: Visitor>(sc: &Scenario, cfg: ExploreConfig, visitor: &mut V) -> Result<ExploreReport, ScenarioError> {
    if let Some(b) = sc.banks.iter().find(|b| !b.behavior.is_honest()) {
        return Err(ScenarioError::Behavior {
            bank: b.name.clone(),
            msg: "exhaustive mode only runs honest banks".into(),
        });
    }
    let world = World::build(sc)?;
    let banks: Vec<BankState> = world
        .keys
        .iter()
        .map(|k| BankState::new(k.clone(), world.init.clone(), world.cfg))
        .collect();
    let flights: Vec<Flight> = world
        .submissions
        .iter()
        .map(|s| Flight {
            to: s.via.bank,
            from: None,
            msg: Message::UserTx(s.tx.clone()),
        })
        .collect();
    let submitted = world.submissions.iter().map(|s| (s.via.bank, s.tx.key())).collect();
    let n = banks.len();
    let root = State {
        banks,
        flights,
        awake: vec![false; n],
    };
    let mut search = Search {
        world: &world,
        cfg,
        visitor,
        submitted,
        memo: HashMap::new(),
        path: Vec::new(),
        report: ExploreReport::default(),
    };
    let total = search.visit(root);
    search.report.schedules = total.unwrap_or(0);
    Ok(search.report)
}

impl<V: Visitor> Search<'_, V> {
    /// Number of complete schedules from `s`, or `None` once a violation
    /// or the state budget stopped the search.
    fn visit(&mut self, s: State) -> Option<u128> {
        let fp = s.fingerprint(self.cfg.fifo);
        if let Some(&n) = self.memo.get(&fp) {
            return Some(n);
        }
        if self.report.states >= self.cfg.max_states {
            self.report.exhausted_budget = true;
            return None;
        }
        self.report.states += 1;
        self.report.max_in_flight = self.report.max_in_flight.max(s.flights.len());
        self.report.max_depth_seen = self.report.max_depth_seen.max(self.path.len());
        let choices = s.choices(self.cfg.fifo);
        if choices.is_empty() {
            self.report.leaves += 1;
            if let Err(e) = self.visitor.leaf(&s.banks, &self.submitted) {
                self.report.violation = Some((self.path.clone(), e));
                return None;
            }
            self.memo.insert(fp, 1);
            return Some(1);
        }
        if self.path.len() >= self.cfg.max_depth {
            self.report.cut += 1;
            self.memo.insert(fp, 0);
            return Some(0);
        }
        let mut total: u128 = 0;
        for c in choices {
            let mut next = s.clone();
            let (label, at) = self.apply(&mut next, c);
            let events = next.banks[at].take_events();
            self.path.push(label);
            let r = match self.visitor.step(&next.banks, at, &events) {
                Ok(()) => self.visit(next),
                Err(e) => {
                    self.report.violation = Some((self.path.clone(), e));
                    None
                }
            };
            self.path.pop();
            total += r?;
        }
        self.memo.insert(fp, total);
        Some(total)
    }

    fn apply(&mut self, s: &mut State, c: Choice) -> (String, usize) {
        let names = &self.world.names;
        let at = match c {
            Choice::Deliver(i) => {
                let f = s.flights.remove(i);
                let from = f.from.map(|b| self.world.ids[b]);
                let label = match f.from {
                    Some(b) => format!("{} {}->{}", f.msg.kind(), names[b], names[f.to]),
                    None => format!("{} user->{}", f.msg.kind(), names[f.to]),
                };
                s.banks[f.to].handle(from, f.msg);
                self.route(s, f.to);
                return (label, f.to);
            }
            Choice::Wake(b) => {
                s.awake[b] = false;
                s.banks[b].activate();
                b
            }
        };
        self.route(s, at);
        (format!("wake {}", names[at]), at)
    }

    fn route(&self, s: &mut State, at: usize) {
        for o in s.banks[at].take_outbox() {
            let to: Vec<usize> = match o.to {
                Recipient::Broadcast => (0..s.banks.len()).filter(|&j| j != at).collect(),
                Recipient::Bank(id) => self.world.index_of(&id).into_iter().collect(),
            };
            for j in to {
                s.flights.push(Flight {
                    to: j,
                    from: Some(at),
                    msg: o.msg.clone(),
                });
            }
        }
        s.awake[at] = s.banks[at].wants_wake();
    }
}
