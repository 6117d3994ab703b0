//! The event loop: banks exchange messages under a delay policy until
//! nothing is left in flight.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use blockgraph::bank::{BankEvent, BankState, Message, Outgoing, Recipient};
use blockgraph::codec::{encode_node, encode_transaction};
use blockgraph::{NodeKind, Phase};

use crate::scenario::{Behavior, DelayPolicy, Scenario, ScenarioError};
use crate::trace::{BankInfo, Event, EventKind, Footer, Header, Trace, UserInfo, TRACE_SCHEMA};
use crate::world::World;

#[derive(Debug, Clone)]
pub struct Twin {
    pub label: String,
    pub state: BankState,
    /// Banks this twin talks to; `None` means everyone.
    group: Option<BTreeSet<usize>>,
    wake_pending: bool,
}

impl Twin {
    fn hears(&self, bank: usize) -> bool {
        self.group.as_ref().is_none_or(|g| g.contains(&bank))
    }
}

#[derive(Debug, Clone)]
struct Actor {
    behavior: Behavior,
    twins: Vec<Twin>,
    split: bool,
    crashed: bool,
    created: u64,
    /// Submissions for a twin that does not exist yet.
    held: Vec<(usize, Message)>,
}

#[derive(Debug, Clone)]
enum Sender {
    User(String),
    Bank(usize),
}

#[derive(Debug, Clone)]
enum Job {
    Deliver {
        id: u64,
        from: Sender,
        twin: Option<usize>,
        msg: Message,
    },
    Wake {
        twin: usize,
    },
}

#[derive(Debug, Clone)]
struct Pending {
    to: usize,
    job: Job,
}

/// Final states of a run, kept for in-process inspection.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub trace: Trace,
    pub world: World,
    /// Label and final state of every bank and twin.
    pub banks: Vec<(String, BankState)>,
}

impl Outcome {
    pub fn bank(&self, label: &str) -> Option<&BankState> {
        self.banks.iter().find(|(l, _)| l == label).map(|(_, s)| s)
    }

    /// Final states of honest banks.
    pub fn honest(&self) -> impl Iterator<Item = (&str, &BankState)> {
        self.banks
            .iter()
            .filter(|(l, _)| self.trace.is_honest(l))
            .map(|(l, s)| (l.as_str(), s))
    }
}

pub struct Simulator {
    world: World,
    policy: DelayPolicy,
    actors: Vec<Actor>,
    timed: BTreeMap<(u64, u64), Pending>,
    /// Adversarial mode keeps messages here, keyed by (receiver power, age).
    inflight: BTreeMap<(u64, u64), Pending>,
    order: u64,
    now: u64,
    next_msg: u64,
    rng: ChaCha8Rng,
    max_events: u64,
    truncated: bool,
    trace: Trace,
}

/// Runs a scenario to quiescence.
pub fn run(sc: &Scenario) -> Result<Outcome, ScenarioError> {
    Ok(Simulator::new(sc)?.run())
}

/// Runs with a different event budget, e.g. to replay a prefix.
pub fn run_prefix(sc: &Scenario, max_events: u64) -> Result<Outcome, ScenarioError> {
    let mut s = Simulator::new(sc)?;
    s.max_events = max_events;
    Ok(s.run())
}

impl Simulator {
    pub fn new(sc: &Scenario) -> Result<Self, ScenarioError> {
        let world = World::build(sc)?;
        let actors = sc
            .banks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let mut state = BankState::new(world.keys[i].clone(), world.init.clone(), world.cfg);
                if let Some((block, _)) = b.behavior.groups() {
                    let cap = match b.behavior {
                        Behavior::EquivocateStart { .. } => block - 1,
                        Behavior::EquivocateClose { .. } => {
                            state.set_hold(Some((NodeKind::Close, block)));
                            block
                        }
                        _ => {
                            state.set_hold(Some((NodeKind::Accept, block)));
                            block
                        }
                    };
                    state.set_max_starts(Some(cap));
                }
                Actor {
                    behavior: b.behavior.clone(),
                    twins: vec![Twin {
                        label: b.name.clone(),
                        state,
                        group: None,
                        wake_pending: false,
                    }],
                    split: false,
                    crashed: false,
                    created: 0,
                    held: Vec::new(),
                }
            })
            .collect();
        let header = Header {
            schema: TRACE_SCHEMA.to_string(),
            scenario: sc.name.clone(),
            scenario_digest: sc.digest().to_hex(),
            seed: sc.seed,
            scheme: world.scheme.name().to_string(),
            shared_power: world.shared.name().to_string(),
            patience: world.cfg.patience,
            init: hex::encode(encode_node(&blockgraph::Node::Init(world.init.clone()))),
            banks: sc
                .banks
                .iter()
                .zip(&world.ids)
                .map(|(b, id)| BankInfo {
                    name: b.name.clone(),
                    key: hex::encode(id.0),
                    honest: b.behavior.is_honest(),
                })
                .collect(),
            users: world
                .users
                .iter()
                .map(|(n, k)| UserInfo {
                    name: n.clone(),
                    key: hex::encode(k.public()),
                })
                .collect(),
        };
        let mut sim = Simulator {
            policy: sc.delay.clone(),
            actors,
            timed: BTreeMap::new(),
            inflight: BTreeMap::new(),
            order: 0,
            now: 0,
            next_msg: 0,
            rng: ChaCha8Rng::seed_from_u64(sc.seed),
            max_events: sc.limits.max_events,
            truncated: false,
            trace: Trace {
                header,
                events: Vec::new(),
                footer: Footer {
                    events: 0,
                    end_time: 0,
                    truncated: false,
                    graphs: BTreeMap::new(),
                    integrity: String::new(),
                },
            },
            world,
        };
        for s in sim.world.submissions.clone() {
            let id = sim.fresh_msg();
            let job = Job::Deliver {
                id,
                from: Sender::User(s.user.clone()),
                twin: s.via.twin,
                msg: Message::UserTx(s.tx.clone()),
            };
            sim.push_timed(s.at, Pending { to: s.via.bank, job });
        }
        for k in 0..sim.actors.len() {
            sim.check_behavior(k);
        }
        Ok(sim)
    }

    fn fresh_msg(&mut self) -> u64 {
        self.next_msg += 1;
        self.next_msg - 1
    }

    fn push_timed(&mut self, at: u64, p: Pending) {
        self.order += 1;
        self.timed.insert((at, self.order), p);
    }

    fn delay(&mut self, from: usize, to: usize) -> u64 {
        match &self.policy {
            DelayPolicy::Uniform { lo, hi } => self.rng.gen_range(*lo..=*hi),
            DelayPolicy::Adversarial => 1,
            DelayPolicy::Fixed { default, links } => {
                let (f, t) = (&self.world.names[from], &self.world.names[to]);
                links
                    .iter()
                    .rev()
                    .find(|l| (l.from == "*" || l.from == *f) && (l.to == "*" || l.to == *t))
                    .map_or(*default, |l| l.delay)
            }
        }
    }

    fn record(&mut self, bank: String, kind: EventKind) {
        let i = self.trace.events.len() as u64;
        self.trace.events.push(Event {
            i,
            t: self.now,
            bank,
            kind,
        });
    }

    fn next(&mut self) -> Option<Pending> {
        if matches!(self.policy, DelayPolicy::Adversarial) && !self.inflight.is_empty() {
            let due = self.timed.first_key_value().is_some_and(|((t, _), _)| *t <= self.now);
            if !due {
                self.now += 1;
                return self.inflight.pop_first().map(|(_, p)| p);
            }
        }
        let ((t, _), p) = self.timed.pop_first()?;
        self.now = self.now.max(t);
        Some(p)
    }

    pub fn run(mut self) -> Outcome {
        while (self.trace.events.len() as u64) < self.max_events {
            let Some(p) = self.next() else { break };
            self.dispatch(p);
        }
        self.truncated = !(self.timed.is_empty() && self.inflight.is_empty());
        let mut banks = Vec::new();
        for a in self.actors {
            for t in a.twins {
                self.trace
                    .footer
                    .graphs
                    .insert(t.label.clone(), t.state.graph().fingerprint().to_hex());
                banks.push((t.label, t.state));
            }
        }
        self.trace.footer.truncated = self.truncated;
        self.trace.footer.end_time = self.now;
        self.trace.seal();
        Outcome {
            trace: self.trace,
            world: self.world,
            banks,
        }
    }

    fn dispatch(&mut self, p: Pending) {
        let k = p.to;
        match p.job {
            Job::Wake { twin } => {
                let a = &mut self.actors[k];
                let Some(t) = a.twins.get_mut(twin) else { return };
                t.wake_pending = false;
                if a.crashed {
                    return;
                }
                let label = t.label.clone();
                self.record(label, EventKind::Wake);
                self.actors[k].twins[twin].state.activate();
                self.after(k, twin);
            }
            Job::Deliver { id, from, twin, msg } => {
                let (from_label, from_bank) = match &from {
                    Sender::User(u) => (format!("user:{u}"), None),
                    Sender::Bank(b) => (self.world.names[*b].clone(), Some(*b)),
                };
                let tx = match &msg {
                    Message::UserTx(t) => Some(hex::encode(encode_transaction(t))),
                    _ => None,
                };
                self.record(
                    self.world.names[k].clone(),
                    EventKind::MessageDelivered {
                        msg: id,
                        from: from_label,
                        kind: msg.kind().to_string(),
                        digests: msg.digests().iter().map(|d| d.to_hex()).collect(),
                        tx,
                    },
                );
                let a = &mut self.actors[k];
                if a.crashed {
                    return;
                }
                let targets: Vec<usize> = match (from_bank, twin) {
                    (Some(b), _) => (0..a.twins.len()).filter(|&i| a.twins[i].hears(b)).collect(),
                    (None, None) => (0..a.twins.len()).collect(),
                    (None, Some(i)) if a.split => vec![i],
                    (None, Some(i)) => {
                        a.held.push((i, msg));
                        return;
                    }
                };
                let sender = from_bank.map(|b| self.world.ids[b]);
                for i in targets {
                    self.actors[k].twins[i].state.handle(sender, msg.clone());
                    self.after(k, i);
                }
            }
        }
    }

    /// Publishes what a twin produced in its last activation.
    fn after(&mut self, k: usize, twin: usize) {
        let events = self.actors[k].twins[twin].state.take_events();
        let label = self.actors[k].twins[twin].label.clone();
        for e in events {
            let kind = match e {
                BankEvent::NodeCreated(n) => {
                    self.actors[k].created += 1;
                    EventKind::NodeCreated {
                        digest: n.digest().to_hex(),
                        node: hex::encode(encode_node(&n)),
                    }
                }
                BankEvent::NodeInserted(d) => EventKind::NodeInserted { digest: d.to_hex() },
                BankEvent::Quarantined { digest, missing } => EventKind::NodeQuarantined {
                    digest: digest.to_hex(),
                    missing,
                },
                BankEvent::Discarded { digest, reason } => EventKind::NodeDiscarded {
                    digest: digest.to_hex(),
                    reason: reason.name().to_string(),
                },
                BankEvent::TxAccepted(key) => EventKind::TxAccepted { key: key.id().to_hex() },
                BankEvent::TxRejected(key, cause) => EventKind::TxRejected {
                    key: key.id().to_hex(),
                    cause: cause.name().to_string(),
                },
                BankEvent::TxRetried(key) => EventKind::TxRetried { key: key.id().to_hex() },
                BankEvent::Warning(text) => EventKind::Warning { text },
            };
            self.record(label.clone(), kind);
        }
        let out = self.actors[k].twins[twin].state.take_outbox();
        for o in out {
            self.route(k, twin, o);
        }
        let t = &mut self.actors[k].twins[twin];
        if t.state.wants_wake() && !t.wake_pending {
            t.wake_pending = true;
            let d = self.delay(k, k);
            let at = self.now + d;
            self.push_timed(at, Pending { to: k, job: Job::Wake { twin } });
        }
        self.check_behavior(k);
    }

    fn route(&mut self, k: usize, twin: usize, o: Outgoing) {
        let withheld: BTreeSet<usize> = match &self.actors[k].behavior {
            Behavior::Withhold { targets } => targets
                .iter()
                .filter_map(|n| self.world.names.iter().position(|m| m == n))
                .collect(),
            _ => BTreeSet::new(),
        };
        let t = &self.actors[k].twins[twin];
        let receivers: Vec<usize> = match o.to {
            Recipient::Broadcast => (0..self.actors.len()).filter(|&j| j != k).collect(),
            Recipient::Bank(id) => self.world.index_of(&id).into_iter().collect(),
        };
        let receivers: Vec<usize> = receivers
            .into_iter()
            .filter(|&j| t.hears(j) && !withheld.contains(&j))
            .collect();
        let label = t.label.clone();
        for j in receivers {
            let id = self.fresh_msg();
            self.record(
                label.clone(),
                EventKind::MessageSent {
                    msg: id,
                    to: self.world.names[j].clone(),
                    kind: o.msg.kind().to_string(),
                    digests: o.msg.digests().iter().map(|d| d.to_hex()).collect(),
                },
            );
            let p = Pending {
                to: j,
                job: Job::Deliver {
                    id,
                    from: Sender::Bank(k),
                    twin: None,
                    msg: o.msg.clone(),
                },
            };
            if matches!(self.policy, DelayPolicy::Adversarial) {
                self.order += 1;
                self.inflight.insert((self.world.power[j], self.order), p);
            } else {
                let at = self.now + self.delay(k, j);
                self.push_timed(at, p);
            }
        }
    }

    /// Applies crash and fork scripts once their trigger holds.
    fn check_behavior(&mut self, k: usize) {
        let a = &mut self.actors[k];
        if let Behavior::Crash { after_nodes } = a.behavior {
            if !a.crashed && a.created >= after_nodes {
                a.crashed = true;
                let label = a.twins[0].label.clone();
                self.record(label, EventKind::Crash);
            }
            return;
        }
        let Some((block, groups)) = a.behavior.groups() else { return };
        if a.split {
            return;
        }
        let s = &a.twins[0].state;
        let ready = match (&a.behavior, s.phase()) {
            (Behavior::EquivocateStart { .. }, Phase::Idle) => s.starts_made() + 1 == block,
            (Behavior::EquivocateClose { .. }, Phase::Open { .. })
            | (Behavior::EquivocateAccept { .. }, Phase::Closed { .. }) => {
                s.starts_made() == block && s.quorum_ready()
            }
            _ => false,
        };
        if !ready {
            return;
        }
        let groups: Vec<BTreeSet<usize>> = groups
            .iter()
            .map(|g| {
                g.iter()
                    .filter_map(|n| self.world.names.iter().position(|m| m == n))
                    .collect()
            })
            .collect();
        let base = a.twins.pop().expect("one twin before the split");
        let name = base.label.clone();
        a.twins = groups
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let mut state = base.state.clone();
                state.set_max_starts(Some(block));
                state.set_strict(false);
                state.set_hold(None);
                for _ in 0..i {
                    state.pad();
                }
                Twin {
                    label: format!("{name}#{i}"),
                    state,
                    group: Some(g),
                    wake_pending: false,
                }
            })
            .collect();
        a.split = true;
        let twins = a.twins.iter().map(|t| t.label.clone()).collect();
        let held = std::mem::take(&mut a.held);
        self.record(name, EventKind::Split { twins });
        for (i, msg) in held {
            if i < self.actors[k].twins.len() {
                self.actors[k].twins[i].state.handle(None, msg);
                self.after(k, i);
            }
        }
        // the raised Start cap may let a twin act on its queue right away
        for i in 0..self.actors[k].twins.len() {
            self.actors[k].twins[i].state.activate();
            self.after(k, i);
        }
    }
}
