//! Deterministic single-threaded scheduler.
//!
//! Every pending delivery and every runnable actor is a candidate; a seeded
//! RNG picks one per step. Channels are FIFO per (sender, receiver), which is
//! all the ordering the transports promise, so any interleaving the threaded
//! driver can produce is reachable from some seed.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::actor::{Actor, Effect};
use super::session::{session_token, Prepared, Results, SessionError, StartError};
use super::trace::{Clock, TraceEvent, TraceKind};
use crate::lang::ast::Role;
use crate::recovery::monitor::{AuditRecord, Monitor, MonitorInput, MonitorOutput, Spawner};
use crate::transport::{Address, RouteTable};
use crate::wire::{Message, MessageType, SessionToken};

#[derive(Clone, Debug)]
pub struct SimOptions {
    pub seed: u64,
    pub step_limit: u64,
    /// Messages sent by this role are delivered only when nothing else can run.
    pub delay: Option<Role>,
    /// Copy every choreography message to the same role of the next session.
    pub crosstalk: bool,
    pub deltas: bool,
    pub record_trace: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { seed: 0, step_limit: 50_000_000, delay: None, crosstalk: false, deltas: true, record_trace: true }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("deadlock: no actor can make progress")]
    Deadlock,
    #[error("step limit of {0} exceeded")]
    StepLimit(u64),
}

#[derive(Clone, Debug)]
pub struct SessionOutcome {
    pub token: SessionToken,
    pub result: Result<Results, SessionError>,
    pub recoveries: u32,
    pub peak_stored_frames: usize,
    pub dropped: u64,
    pub stale: u64,
}

#[derive(Clone, Debug)]
pub struct SimReport {
    pub sessions: Vec<SessionOutcome>,
    pub trace: Vec<TraceEvent>,
    pub audit: Vec<AuditRecord>,
    pub steps: u64,
    pub error: Option<SimError>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Src {
    Actor(u64),
    Monitor(usize),
}

#[derive(Clone, Copy, Debug)]
enum Event {
    Deliver(Src, u64),
    Monitor(u64),
    Step(u64),
}

struct SimSession {
    token: SessionToken,
    prepared: Prepared,
    monitor: Monitor,
    outcome: Option<Result<Results, SessionError>>,
    dropped: u64,
    stale: u64,
}

struct Slot {
    session: usize,
    actor: Actor,
}

struct Sim {
    opts: SimOptions,
    rng: ChaCha8Rng,
    clock: Clock,
    next_slot: u64,
    sessions: Vec<SimSession>,
    slots: BTreeMap<u64, Slot>,
    /// Slots of the delayed role, kept after the actor halts.
    delayed: BTreeSet<u64>,
    channels: BTreeMap<(Src, u64), VecDeque<Message>>,
    to_monitor: BTreeMap<u64, (usize, VecDeque<MonitorInput>)>,
    trace: Vec<TraceEvent>,
    audit: Vec<AuditRecord>,
    steps: u64,
}

struct SlotSpawner<'a> {
    next: &'a mut u64,
    spawned: Vec<(u64, Role)>,
}

impl Spawner for SlotSpawner<'_> {
    fn spawn(&mut self, role: &Role) -> Address {
        let slot = *self.next;
        *self.next += 1;
        self.spawned.push((slot, role.clone()));
        Address::Mem { slot }
    }
}

/// Run `sessions` to completion on one thread.
pub fn run_sim(sessions: Vec<Prepared>, opts: SimOptions) -> Result<SimReport, StartError> {
    let mut sim = Sim {
        rng: ChaCha8Rng::seed_from_u64(opts.seed),
        opts,
        clock: Clock::default(),
        next_slot: 0,
        sessions: Vec::new(),
        slots: BTreeMap::new(),
        delayed: BTreeSet::new(),
        channels: BTreeMap::new(),
        to_monitor: BTreeMap::new(),
        trace: Vec::new(),
        audit: Vec::new(),
        steps: 0,
    };
    for (i, p) in sessions.into_iter().enumerate() {
        sim.add_session(i, p)?;
    }
    let error = sim.run();
    Ok(sim.report(error))
}

impl Sim {
    fn add_session(&mut self, idx: usize, p: Prepared) -> Result<(), StartError> {
        let token = session_token(Some(self.opts.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(idx as u64)));
        let mut routes = Vec::new();
        for role in p.programs.keys() {
            routes.push((role.clone(), Address::Mem { slot: self.next_slot }));
            self.next_slot += 1;
        }
        let routes = RouteTable::new(routes);
        for (role, prog) in &p.programs {
            let mut actor = Actor::start(token, prog.clone(), p.tables[role].clone(), routes.clone(), &p.args)
                .map_err(StartError::BadArguments)?;
            actor.set_tracing(self.opts.record_trace);
            let slot = routes.get(role).expect("route per role").slot();
            let kind = TraceKind::Start { token: prog.entry.to_string() };
            self.record(token, &actor, kind);
            self.insert_slot(slot, Slot { session: idx, actor });
        }
        let roles = p.programs.keys().cloned().collect();
        let mut monitor = Monitor::new(token, roles, routes, self.opts.deltas, self.clock.clone());
        monitor.set_audit(self.opts.record_trace);
        self.sessions.push(SimSession { token, prepared: p, monitor, outcome: None, dropped: 0, stale: 0 });
        Ok(())
    }

    fn record(&mut self, token: SessionToken, actor: &Actor, kind: TraceKind) {
        if self.opts.record_trace {
            self.trace.push(TraceEvent {
                time: self.clock.tick(),
                session: token.to_string(),
                role: actor.role().to_string(),
                epoch: actor.epoch(),
                kind,
            });
        }
    }

    fn delayed(&self, src: Src) -> bool {
        matches!(src, Src::Actor(s) if self.delayed.contains(&s))
    }

    fn insert_slot(&mut self, slot: u64, s: Slot) {
        if self.opts.delay.as_ref() == Some(s.actor.role()) {
            self.delayed.insert(slot);
        }
        self.slots.insert(slot, s);
    }

    fn candidates(&self) -> (Vec<Event>, Vec<Event>) {
        let (mut now, mut later) = (Vec::new(), Vec::new());
        for ((src, dst), q) in &self.channels {
            if !q.is_empty() {
                let e = Event::Deliver(*src, *dst);
                if self.delayed(*src) {
                    later.push(e)
                } else {
                    now.push(e)
                }
            }
        }
        for (slot, (_, q)) in &self.to_monitor {
            if !q.is_empty() {
                now.push(Event::Monitor(*slot));
            }
        }
        for (slot, s) in &self.slots {
            if s.actor.ready() {
                now.push(Event::Step(*slot));
            }
        }
        (now, later)
    }

    fn live(&self) -> bool {
        self.sessions.iter().any(|s| s.outcome.is_none())
    }

    fn run(&mut self) -> Option<SimError> {
        while self.live() {
            let (now, later) = self.candidates();
            let pool = if now.is_empty() { later } else { now };
            if pool.is_empty() {
                return Some(SimError::Deadlock);
            }
            self.steps += 1;
            if self.steps > self.opts.step_limit {
                return Some(SimError::StepLimit(self.opts.step_limit));
            }
            let e = pool[self.rng.gen_range(0..pool.len())];
            self.fire(e);
        }
        None
    }

    fn fire(&mut self, e: Event) {
        match e {
            Event::Deliver(src, dst) => {
                let q = self.channels.get_mut(&(src, dst)).expect("candidate channel");
                let m = q.pop_front().expect("non-empty channel");
                if q.is_empty() {
                    self.channels.remove(&(src, dst));
                }
                // Deliveries to a closed address are lost.
                let Some(slot) = self.slots.get_mut(&dst) else { return };
                let mut fx = Vec::new();
                slot.actor.deliver(m, &mut fx);
                self.apply(dst, fx);
            }
            Event::Step(s) => {
                let slot = self.slots.get_mut(&s).expect("candidate actor");
                let mut fx = Vec::new();
                slot.actor.step(&mut fx);
                self.apply(s, fx);
            }
            Event::Monitor(s) => {
                let (idx, q) = self.to_monitor.get_mut(&s).expect("candidate queue");
                let idx = *idx;
                let input = q.pop_front().expect("non-empty queue");
                if q.is_empty() {
                    self.to_monitor.remove(&s);
                }
                self.feed_monitor(idx, input);
            }
        }
    }

    fn feed_monitor(&mut self, idx: usize, input: MonitorInput) {
        let sess = &mut self.sessions[idx];
        if sess.outcome.is_some() {
            return;
        }
        let mut spawner = SlotSpawner { next: &mut self.next_slot, spawned: Vec::new() };
        let outputs = sess.monitor.handle(input, &mut spawner);
        let spawned = spawner.spawned;
        self.audit.extend(sess.monitor.take_audit());
        let fresh: Vec<(u64, Actor)> = spawned
            .into_iter()
            .map(|(slot, role)| {
                let mut actor = Actor::fresh(
                    sess.token,
                    sess.prepared.programs[&role].clone(),
                    sess.prepared.tables[&role].clone(),
                );
                actor.set_tracing(self.opts.record_trace);
                (slot, actor)
            })
            .collect();
        for (slot, actor) in fresh {
            self.insert_slot(slot, Slot { session: idx, actor });
        }
        for o in outputs {
            match o {
                MonitorOutput::Control { to, msg, .. } => {
                    self.channels.entry((Src::Monitor(idx), to.slot())).or_default().push_back(msg);
                }
                MonitorOutput::Abort { reason } => {
                    self.teardown(idx, Err(SessionError::SessionAborted { reason }));
                    return;
                }
            }
        }
        let sess = &self.sessions[idx];
        if sess.monitor.is_complete() {
            let results = sess.monitor.results().clone();
            self.teardown(idx, Ok(results));
        }
    }

    /// Stop every actor of session `idx` and record its outcome.
    fn teardown(&mut self, idx: usize, outcome: Result<Results, SessionError>) {
        let gone: Vec<u64> = self.slots.iter().filter(|(_, s)| s.session == idx).map(|(k, _)| *k).collect();
        for k in gone {
            let s = self.slots.remove(&k).expect("listed slot");
            self.sessions[idx].dropped += s.actor.dropped();
            self.sessions[idx].stale += s.actor.stale();
            self.channels.retain(|(_, dst), _| *dst != k);
        }
        self.channels.retain(|(src, _), _| *src != Src::Monitor(idx));
        self.to_monitor.retain(|_, (i, _)| *i != idx);
        self.sessions[idx].outcome = Some(outcome);
    }

    fn apply(&mut self, slot: u64, fx: Vec<Effect>) {
        let Some(s) = self.slots.get(&slot) else { return };
        let idx = s.session;
        let token = self.sessions[idx].token;
        for e in fx {
            match e {
                Effect::Send { to, role, msg } => {
                    if self.opts.crosstalk && msg.mtype == MessageType::Chorex {
                        if let Some(other) = self.crosstalk_target(idx, &role) {
                            self.channels.entry((Src::Actor(slot), other)).or_default().push_back(msg.clone());
                        }
                    }
                    self.channels.entry((Src::Actor(slot), to.slot())).or_default().push_back(msg);
                }
                Effect::Monitor(m) => {
                    self.to_monitor.entry(slot).or_insert_with(|| (idx, VecDeque::new())).1.push_back(m);
                }
                Effect::Trace(kind) => {
                    let actor = &self.slots[&slot].actor;
                    if self.opts.record_trace {
                        self.trace.push(TraceEvent {
                            time: self.clock.tick(),
                            session: token.to_string(),
                            role: actor.role().to_string(),
                            epoch: actor.epoch(),
                            kind,
                        });
                    }
                }
            }
        }
        let s = &self.slots[&slot];
        if s.actor.is_halted() {
            let s = self.slots.remove(&slot).expect("present");
            self.sessions[idx].dropped += s.actor.dropped();
            self.sessions[idx].stale += s.actor.stale();
        }
    }

    fn crosstalk_target(&self, idx: usize, role: &Role) -> Option<u64> {
        if self.sessions.len() < 2 {
            return None;
        }
        let other = (idx + 1) % self.sessions.len();
        self.sessions[other].monitor.routes().get(role).map(Address::slot)
    }

    fn report(mut self, error: Option<SimError>) -> SimReport {
        let steps = self.steps;
        for (_, s) in std::mem::take(&mut self.slots) {
            self.sessions[s.session].dropped += s.actor.dropped();
            self.sessions[s.session].stale += s.actor.stale();
        }
        let sessions = self
            .sessions
            .into_iter()
            .map(|s| SessionOutcome {
                token: s.token,
                result: s.outcome.unwrap_or_else(|| {
                    Err(SessionError::SessionAborted {
                        reason: error.as_ref().map_or("unfinished".into(), |e| e.to_string()),
                    })
                }),
                recoveries: s.monitor.recoveries(),
                peak_stored_frames: s.monitor.peak_stored_frames(),
                dropped: s.dropped,
                stale: s.stale,
            })
            .collect();
        SimReport { sessions, trace: self.trace, audit: self.audit, steps, error }
    }
}
