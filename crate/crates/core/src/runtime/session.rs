//! Starting sessions on real threads over a [`Transport`], and the handle a
//! caller uses to collect the per-role results.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::actor::{Actor, Effect};
use super::trace::{Clock, TraceEvent, TraceKind};
use crate::eval::{ImplRegistry, ImplTable};
use crate::lang::ast::Role;
use crate::project::{EndpointProgram, FunctionSpec};
use crate::recovery::monitor::{AuditRecord, Monitor, MonitorInput, MonitorOutput, Spawner};
use crate::transport::{Address, Outbox, RouteTable, Transport};
use crate::value::Value;
use crate::wire::{Message, SessionToken};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum StartError {
    #[error("{role} does not provide required function {spec}")]
    MissingImplFunction { role: Role, spec: FunctionSpec },
    #[error("duplicate role {0}")]
    DuplicateRole(Role),
    #[error("no endpoint programs")]
    NoRoles,
    #[error("{0}")]
    BadArguments(String),
    #[error("transport: {0}")]
    Transport(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("timed out waiting for results")]
    Timeout,
    #[error("session aborted: {reason}")]
    SessionAborted { reason: String },
}

pub type Results = BTreeMap<Role, Value>;

/// Endpoint programs and impl tables checked against each other.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub programs: BTreeMap<Role, Arc<EndpointProgram>>,
    pub tables: BTreeMap<Role, Arc<ImplTable>>,
    pub args: Vec<Value>,
}

pub fn prepare(programs: Vec<EndpointProgram>, impls: &ImplRegistry, args: &[Value]) -> Result<Prepared, StartError> {
    if programs.is_empty() {
        return Err(StartError::NoRoles);
    }
    let mut by_role = BTreeMap::new();
    for p in programs {
        let role = p.role.clone();
        if by_role.insert(role.clone(), Arc::new(p)).is_some() {
            return Err(StartError::DuplicateRole(role));
        }
    }
    let mut tables = BTreeMap::new();
    for (role, p) in &by_role {
        let table = impls.table(role);
        if let Some(spec) = p.required.iter().find(|s| !table.provides(&s.name, s.arity)) {
            return Err(StartError::MissingImplFunction { role: role.clone(), spec: spec.clone() });
        }
        tables.insert(role.clone(), table);
    }
    Ok(Prepared { programs: by_role, tables, args: args.to_vec() })
}

/// A fresh session token; reproducible when a seed is given.
pub fn session_token(seed: Option<u64>) -> SessionToken {
    match seed {
        Some(s) => SessionToken(ChaCha8Rng::seed_from_u64(s).gen()),
        None => SessionToken(rand::random()),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SessionStats {
    pub recoveries: u32,
    pub peak_stored_frames: usize,
    /// Messages dropped for carrying another session's token.
    pub dropped: u64,
    /// Messages dropped as belonging to a superseded epoch.
    pub stale: u64,
}

#[derive(Clone, Debug)]
pub struct SessionOptions {
    pub seed: Option<u64>,
    /// Store checkpoint records as stack deltas.
    pub deltas: bool,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions { seed: None, deltas: true }
    }
}

#[derive(Default)]
struct Shared {
    stop: AtomicBool,
    dropped: AtomicU64,
    stale: AtomicU64,
    trace: Mutex<Vec<TraceEvent>>,
    audit: Mutex<Vec<AuditRecord>>,
    stats: Mutex<SessionStats>,
}

pub struct SessionHandle {
    token: SessionToken,
    routes: RouteTable,
    results: Receiver<Result<Results, SessionError>>,
    outcome: Mutex<Option<Result<Results, SessionError>>>,
    shared: Arc<Shared>,
    monitor: Option<thread::JoinHandle<()>>,
}

impl SessionHandle {
    pub fn token(&self) -> SessionToken {
        self.token
    }

    /// Initial network configuration.
    pub fn routes(&self) -> &RouteTable {
        &self.routes
    }

    /// Wait up to `timeout` for every role's value.
    pub fn await_results(&self, timeout: Duration) -> Result<Results, SessionError> {
        let mut outcome = self.outcome.lock().unwrap();
        if let Some(o) = &*outcome {
            return o.clone();
        }
        match self.results.recv_timeout(timeout) {
            Ok(o) => {
                *outcome = Some(o.clone());
                o
            }
            Err(RecvTimeoutError::Timeout) => Err(SessionError::Timeout),
            Err(RecvTimeoutError::Disconnected) => {
                Err(SessionError::SessionAborted { reason: "monitor stopped without a result".into() })
            }
        }
    }

    pub fn trace(&self) -> Vec<TraceEvent> {
        let mut t = self.shared.trace.lock().unwrap().clone();
        t.sort_by_key(|e| e.time);
        t
    }

    pub fn audit(&self) -> Vec<AuditRecord> {
        self.shared.audit.lock().unwrap().clone()
    }

    pub fn stats(&self) -> SessionStats {
        let mut s = self.shared.stats.lock().unwrap().clone();
        s.dropped = self.shared.dropped.load(Ordering::SeqCst);
        s.stale = self.shared.stale.load(Ordering::SeqCst);
        s
    }

    /// Stop every actor and the monitor.
    pub fn shutdown(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.monitor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for SessionHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

const POLL: Duration = Duration::from_millis(5);

struct ActorCtx {
    transport: Arc<dyn Transport>,
    monitor: Sender<MonitorInput>,
    shared: Arc<Shared>,
    clock: Clock,
    token: SessionToken,
}

fn spawn_actor(mut actor: Actor, addr: Address, rx: Receiver<Message>, ctx: ActorCtx) -> thread::JoinHandle<()> {
    let name = format!("actor-{}", actor.role());
    thread::Builder::new()
        .name(name)
        .stack_size(64 << 20)
        .spawn(move || {
            let mut outbox = ctx.transport.outbox();
            let mut fx = Vec::new();
            let (mut dropped, mut stale) = (0, 0);
            while !ctx.shared.stop.load(Ordering::SeqCst) {
                while let Ok(m) = rx.try_recv() {
                    actor.deliver(m, &mut fx);
                }
                let progressed = actor.step(&mut fx);
                flush(&actor, &mut fx, &mut *outbox, &ctx);
                ctx.shared.dropped.fetch_add(actor.dropped() - dropped, Ordering::SeqCst);
                ctx.shared.stale.fetch_add(actor.stale() - stale, Ordering::SeqCst);
                (dropped, stale) = (actor.dropped(), actor.stale());
                if actor.is_halted() {
                    break;
                }
                if !progressed {
                    match rx.recv_timeout(POLL) {
                        Ok(m) => actor.deliver(m, &mut fx),
                        Err(RecvTimeoutError::Timeout) => {}
                        Err(RecvTimeoutError::Disconnected) => break,
                    }
                }
            }
            ctx.transport.close(&addr);
        })
        .expect("spawn actor thread")
}

fn flush(actor: &Actor, fx: &mut Vec<Effect>, outbox: &mut dyn Outbox, ctx: &ActorCtx) {
    for e in fx.drain(..) {
        match e {
            // A failed send means the peer crashed; recovery resends.
            Effect::Send { to, msg, .. } => {
                let _ = outbox.send(&to, &msg);
            }
            Effect::Monitor(m) => {
                let _ = ctx.monitor.send(m);
            }
            Effect::Trace(kind) => ctx.shared.trace.lock().unwrap().push(TraceEvent {
                time: ctx.clock.tick(),
                session: ctx.token.to_string(),
                role: actor.role().to_string(),
                epoch: actor.epoch(),
                kind,
            }),
        }
    }
}

struct ThreadSpawner<'a> {
    prepared: &'a Prepared,
    make_ctx: &'a dyn Fn() -> ActorCtx,
    threads: &'a mut Vec<thread::JoinHandle<()>>,
}

impl Spawner for ThreadSpawner<'_> {
    fn spawn(&mut self, role: &Role) -> Address {
        let ctx = (self.make_ctx)();
        let (addr, rx) = ctx.transport.open().expect("open endpoint for revived actor");
        let actor = Actor::fresh(ctx.token, self.prepared.programs[role].clone(), self.prepared.tables[role].clone());
        self.threads.push(spawn_actor(actor, addr.clone(), rx, ctx));
        addr
    }
}

/// Start one actor thread per role plus a monitor thread.
pub fn start_session(
    programs: Vec<EndpointProgram>,
    impls: &ImplRegistry,
    args: &[Value],
    transport: Arc<dyn Transport>,
    opts: SessionOptions,
) -> Result<SessionHandle, StartError> {
    let prepared = prepare(programs, impls, args)?;
    let token = session_token(opts.seed);
    let mut endpoints = BTreeMap::new();
    for role in prepared.programs.keys() {
        let ep = transport.open().map_err(|e| StartError::Transport(e.to_string()))?;
        endpoints.insert(role.clone(), ep);
    }
    let routes = RouteTable::new(endpoints.iter().map(|(r, (a, _))| (r.clone(), a.clone())));
    let mut actors = Vec::new();
    for (role, p) in &prepared.programs {
        let a = Actor::start(token, p.clone(), prepared.tables[role].clone(), routes.clone(), &prepared.args)
            .map_err(StartError::BadArguments)?;
        actors.push(a);
    }
    let shared = Arc::new(Shared::default());
    let clock = Clock::default();
    let (mon_tx, mon_rx) = channel();
    let (res_tx, res_rx) = channel();
    let make_ctx = {
        let (transport, shared, clock, mon_tx) = (transport.clone(), shared.clone(), clock.clone(), mon_tx.clone());
        move || ActorCtx {
            transport: transport.clone(),
            monitor: mon_tx.clone(),
            shared: shared.clone(),
            clock: clock.clone(),
            token,
        }
    };
    let mut threads = Vec::new();
    for a in actors {
        let (addr, rx) = endpoints.remove(a.role()).expect("endpoint per role");
        let ctx = make_ctx();
        ctx.shared.trace.lock().unwrap().push(TraceEvent {
            time: clock.tick(),
            session: token.to_string(),
            role: a.role().to_string(),
            epoch: 0,
            kind: TraceKind::Start { token: prepared.programs[a.role()].entry.to_string() },
        });
        threads.push(spawn_actor(a, addr, rx, ctx));
    }
    drop(mon_tx);
    let roles: Vec<Role> = prepared.programs.keys().cloned().collect();
    let mut monitor = Monitor::new(token, roles, routes.clone(), opts.deltas, clock.clone());
    let mshared = shared.clone();
    let mtransport = transport.clone();
    let handle = thread::Builder::new()
        .name("monitor".into())
        .spawn(move || {
            let mut outbox = mtransport.outbox();
            let outcome = loop {
                if mshared.stop.load(Ordering::SeqCst) {
                    break None;
                }
                let input = match mon_rx.recv_timeout(POLL) {
                    Ok(i) => i,
                    Err(RecvTimeoutError::Timeout) => continue,
                    Err(RecvTimeoutError::Disconnected) => break None,
                };
                let mut spawner = ThreadSpawner { prepared: &prepared, make_ctx: &make_ctx, threads: &mut threads };
                let outputs = monitor.handle(input, &mut spawner);
                mshared.audit.lock().unwrap().extend(monitor.take_audit());
                {
                    let mut s = mshared.stats.lock().unwrap();
                    s.recoveries = monitor.recoveries();
                    s.peak_stored_frames = monitor.peak_stored_frames();
                }
                let mut abort = None;
                for o in outputs {
                    match o {
                        MonitorOutput::Control { to, msg, .. } => {
                            let _ = outbox.send(&to, &msg);
                        }
                        MonitorOutput::Abort { reason } => abort = Some(reason),
                    }
                }
                if let Some(reason) = abort {
                    break Some(Err(SessionError::SessionAborted { reason }));
                }
                if monitor.is_complete() {
                    break Some(Ok(monitor.results().clone()));
                }
            };
            // Supervisor teardown: the session lives and dies as one.
            mshared.stop.store(true, Ordering::SeqCst);
            if let Some(o) = outcome {
                let _ = res_tx.send(o);
            }
            for t in threads {
                let _ = t.join();
            }
        })
        .expect("spawn monitor thread");
    Ok(SessionHandle { token, routes, results: res_rx, outcome: Mutex::new(None), shared, monitor: Some(handle) })
}
