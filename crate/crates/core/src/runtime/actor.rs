//! One role's endpoint: a sans-IO state machine over its projected blocks.
//!
//! Drivers push arriving messages with [`Actor::deliver`] and call
//! [`Actor::step`] to run one handler block. Everything the actor wants done
//! in the outside world comes back as [`Effect`]s.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::eval::{eval_local, EvalError, ImplTable};
use crate::lang::ast::{Pattern, Role, SiteId};
use crate::lang::pattern::match_pattern;
use crate::project::{choice_var, EndpointProgram, Entry, Instr, Terminator, Token};
use crate::recovery::monitor::MonitorInput;
use crate::runtime::state::{instance_from_value, snapshot_from_value, CkptInstanceId, Counters, Frame, Snapshot};
use crate::runtime::trace::TraceKind;
use crate::transport::{Address, RouteTable};
use crate::value::{Value, Vars};
use crate::wire::{CivToken, Message, MessageType, SessionToken};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Status {
    /// Spawned by the monitor; waits for `revive`.
    Fresh,
    Running(Token),
    /// Waiting for the message the block's entry names.
    Blocked(Token),
    Finished,
    Crashed,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Effect {
    Send { to: Address, role: Role, msg: Message },
    Monitor(MonitorInput),
    Trace(TraceKind),
}

pub struct Actor {
    session: SessionToken,
    role: Role,
    prog: Arc<EndpointProgram>,
    table: Arc<ImplTable>,
    status: Status,
    epoch: u32,
    routes: RouteTable,
    stack: Vec<Arc<Frame>>,
    vars: Vars,
    counters: Counters,
    control: VecDeque<Message>,
    inbox: VecDeque<Message>,
    /// Barriers that arrived before the actor reached the matching wait.
    barriers: Vec<(CkptInstanceId, u32)>,
    dropped: u64,
    stale: u64,
    tracing: bool,
}

macro_rules! trace {
    ($self:ident, $out:ident, $kind:expr) => {
        if $self.tracing {
            $out.push(Effect::Trace($kind));
        }
    };
}

/// Value bound to a parameter position that is located at another role.
fn dummy_for(p: &Pattern, v: &Value) -> Value {
    if *p == Pattern::Wildcard {
        Value::unit()
    } else {
        v.clone()
    }
}

fn bind_all(pats: &[Pattern], vals: &[Value]) -> Option<Vars> {
    let mut env = Vars::new();
    for (p, v) in pats.iter().zip(vals) {
        env.extend(match_pattern(p, v, &env)?);
    }
    Some(env)
}

impl Actor {
    /// An actor that starts at `run` with `args` bound to its parameters.
    pub fn start(
        session: SessionToken,
        prog: Arc<EndpointProgram>,
        table: Arc<ImplTable>,
        routes: RouteTable,
        args: &[Value],
    ) -> Result<Actor, String> {
        let mut a = Actor::fresh(session, prog, table);
        a.routes = routes;
        let entry = a.prog.entry.clone();
        let Entry::Start { params } = &a.prog.block(&entry).entry else {
            return Err(format!("{entry} is not a function entry"));
        };
        if params.len() != args.len() {
            return Err(format!("run expects {} arguments, got {}", params.len(), args.len()));
        }
        let vals: Vec<Value> = params.iter().zip(args).map(|(p, v)| dummy_for(p, v)).collect();
        a.vars =
            bind_all(params, &vals).ok_or_else(|| format!("arguments do not match run's parameters at {}", a.role))?;
        a.status = Status::Running(entry);
        Ok(a)
    }

    /// A replacement actor awaiting its revive message.
    pub fn fresh(session: SessionToken, prog: Arc<EndpointProgram>, table: Arc<ImplTable>) -> Actor {
        Actor {
            session,
            role: prog.role.clone(),
            prog,
            table,
            status: Status::Fresh,
            epoch: 0,
            routes: RouteTable::default(),
            stack: Vec::new(),
            vars: Vars::new(),
            counters: Counters::new(),
            control: VecDeque::new(),
            inbox: VecDeque::new(),
            barriers: Vec::new(),
            dropped: 0,
            stale: 0,
            tracing: true,
        }
    }

    /// Emit [`Effect::Trace`] effects (on by default).
    pub fn set_tracing(&mut self, on: bool) {
        self.tracing = on;
    }

    pub fn role(&self) -> &Role {
        &self.role
    }

    pub fn session(&self) -> SessionToken {
        self.session
    }

    pub fn status(&self) -> &Status {
        &self.status
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn stack(&self) -> &[Arc<Frame>] {
        &self.stack
    }

    pub fn vars(&self) -> &Vars {
        &self.vars
    }

    /// Messages dropped because they belong to another session.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Messages dropped because a recovery superseded their epoch.
    pub fn stale(&self) -> u64 {
        self.stale
    }

    pub fn inbox_len(&self) -> usize {
        self.inbox.len()
    }

    pub fn is_halted(&self) -> bool {
        matches!(self.status, Status::Finished | Status::Crashed)
    }

    /// Accept an arriving message into the control queue or the inbox.
    pub fn deliver(&mut self, msg: Message, out: &mut Vec<Effect>) {
        if self.is_halted() {
            return;
        }
        let (from, site) = match &msg.civ {
            Some(c) => (c.sender.to_string(), c.site.0),
            None => ("$monitor".to_string(), 0),
        };
        if let Some(civ) = &msg.civ {
            if civ.session != self.session {
                self.dropped += 1;
                trace!(
                    self,
                    out,
                    TraceKind::Drop { mtype: msg.mtype.name(), reason: format!("session {}", civ.session) }
                );
                return;
            }
            if !msg.mtype.is_control() && civ.epoch < self.epoch {
                self.stale += 1;
                trace!(self, out, TraceKind::Drop { mtype: msg.mtype.name(), reason: format!("epoch {}", civ.epoch) });
                return;
            }
        }
        trace!(self, out, TraceKind::Arrive { mtype: msg.mtype.name(), from, site });
        if msg.mtype.is_control() {
            self.control.push_back(msg);
        } else {
            self.inbox.push_back(msg);
        }
    }

    /// Whether [`Actor::step`] would make progress.
    pub fn ready(&self) -> bool {
        match &self.status {
            Status::Fresh => self.control.iter().any(|m| m.mtype == MessageType::Revive),
            Status::Finished | Status::Crashed => false,
            _ if !self.control.is_empty() => true,
            Status::Running(_) => true,
            Status::Blocked(t) => self.find_match(t).is_some(),
        }
    }

    /// Handle one control message or run one block. Returns whether anything happened.
    pub fn step(&mut self, out: &mut Vec<Effect>) -> bool {
        match &self.status {
            Status::Finished | Status::Crashed => false,
            Status::Fresh => {
                let Some(i) = self.control.iter().position(|m| m.mtype == MessageType::Revive) else {
                    return false;
                };
                let m = self.control.remove(i).expect("index in range");
                self.on_control(m, out);
                true
            }
            _ if !self.control.is_empty() => {
                let m = self.control.pop_front().expect("non-empty");
                self.on_control(m, out);
                true
            }
            Status::Running(t) => {
                let t = t.clone();
                self.run_block(t, out);
                true
            }
            Status::Blocked(t) => {
                let t = t.clone();
                let Some(m) = self.find_match(&t) else { return false };
                self.take_match(&t, m, out);
                if matches!(self.status, Status::Blocked(_)) {
                    self.run_block(t, out);
                }
                true
            }
        }
    }

    fn civ(&self, site: SiteId, to: &Role) -> CivToken {
        CivToken { session: self.session, site, epoch: self.epoch, sender: self.role.clone(), receiver: to.clone() }
    }

    fn expects(&self, m: &Message, mtype: MessageType, site: SiteId, from: &Role) -> bool {
        m.mtype == mtype && m.civ.as_ref().is_some_and(|c| *c == self.civ_from(site, from))
    }

    fn civ_from(&self, site: SiteId, from: &Role) -> CivToken {
        CivToken { session: self.session, site, epoch: self.epoch, sender: from.clone(), receiver: self.role.clone() }
    }

    fn top_instance(&self) -> Option<CkptInstanceId> {
        self.stack.last().and_then(|f| f.instance())
    }

    /// Index into the inbox (or barrier list) of the message the block at `t` waits for.
    fn find_match(&self, t: &Token) -> Option<usize> {
        match &self.prog.block(t).entry {
            Entry::Recv { site, from, .. } => {
                self.inbox.iter().position(|m| self.expects(m, MessageType::Chorex, *site, from))
            }
            Entry::Choice { site, from } => {
                self.inbox.iter().position(|m| self.expects(m, MessageType::Choice, *site, from))
            }
            Entry::Barrier { .. } => {
                let top = self.top_instance()?;
                self.barriers.iter().position(|(i, e)| *i == top && *e == self.epoch)
            }
            _ => None,
        }
    }

    fn take_match(&mut self, t: &Token, i: usize, out: &mut Vec<Effect>) {
        let block = self.prog.block(t).entry.clone();
        match block {
            Entry::Recv { site, from, pattern } => {
                let m = self.inbox.remove(i).expect("matched index");
                trace!(self, out, TraceKind::Recv { site: site.0, from: from.to_string() });
                match match_pattern(&pattern, &m.payload, &self.vars) {
                    Some(b) => self.vars.extend(b),
                    None => self.crash(EvalError::MatchFailure(m.payload).to_string(), out),
                }
            }
            Entry::Choice { site, from } => {
                let m = self.inbox.remove(i).expect("matched index");
                let branch = m.payload.truthy();
                trace!(self, out, TraceKind::ChoiceRecv { site: site.0, from: from.to_string(), branch });
                self.vars.insert(choice_var(site), Value::Bool(branch));
            }
            Entry::Barrier { .. } => {
                let (instance, _) = self.barriers.remove(i);
                self.stack.pop();
                trace!(self, out, TraceKind::BarrierPass { instance: instance.to_string() });
            }
            _ => unreachable!("only waiting entries match messages"),
        }
    }

    fn set_current(&mut self, t: Token) {
        self.status = if self.prog.block(&t).entry.waits() { Status::Blocked(t) } else { Status::Running(t) };
    }

    fn crash(&mut self, reason: String, out: &mut Vec<Effect>) {
        let innermost = self.stack.iter().rev().find_map(|f| match &**f {
            Frame::Checkpoint { instance, rescuing, .. } => Some((*instance, *rescuing)),
            Frame::Return { .. } => None,
        });
        trace!(self, out, TraceKind::Crash { reason: reason.clone() });
        out.push(Effect::Monitor(MonitorInput::Crash {
            role: self.role.clone(),
            epoch: self.epoch,
            innermost: innermost.map(|x| x.0),
            in_rescue: innermost.is_some_and(|x| x.1),
            reason,
        }));
        self.status = Status::Crashed;
    }

    fn violation(&mut self, reason: String, out: &mut Vec<Effect>) {
        trace!(self, out, TraceKind::Crash { reason: reason.clone() });
        out.push(Effect::Monitor(MonitorInput::Violation { role: self.role.clone(), reason }));
        self.status = Status::Crashed;
    }

    fn eval(&self, e: &crate::lang::ast::Expr) -> Result<Value, String> {
        eval_local(e, &self.vars, &self.table).map_err(|e| e.to_string())
    }

    fn send(&self, to: &Role, msg: Message, out: &mut Vec<Effect>) {
        match self.routes.get(to) {
            Some(addr) => out.push(Effect::Send { to: addr.clone(), role: to.clone(), msg }),
            None => trace!(self, out, TraceKind::Drop { mtype: msg.mtype.name(), reason: format!("no route to {to}") }),
        }
    }

    fn run_block(&mut self, t: Token, out: &mut Vec<Effect>) {
        let prog = self.prog.clone();
        let block = prog.block(&t);
        trace!(self, out, TraceKind::Exec { token: t.to_string() });
        for ins in &block.body {
            if let Err(reason) = self.exec(ins, out) {
                self.crash(reason, out);
                return;
            }
            if self.is_halted() {
                return;
            }
        }
        if let Err(reason) = self.terminate(&block.term, out) {
            self.crash(reason, out);
        }
    }

    fn exec(&mut self, ins: &Instr, out: &mut Vec<Effect>) -> Result<(), String> {
        match ins {
            Instr::Eval { bind, expr } => {
                let v = self.eval(expr)?;
                if let Some(p) = bind {
                    let b = match_pattern(p, &v, &self.vars).ok_or_else(|| EvalError::MatchFailure(v).to_string())?;
                    self.vars.extend(b);
                }
            }
            Instr::Send { site, to, expr } => {
                let v = self.eval(expr)?;
                trace!(self, out, TraceKind::Send { site: site.0, to: to.to_string() });
                self.send(to, Message::chorex(self.civ(*site, to), v), out);
            }
            Instr::SendChoice { site, dests, var } => {
                let branch = self.vars.get(var).is_some_and(Value::truthy);
                trace!(self, out, TraceKind::ChoiceSend { site: site.0, branch });
                for d in dests {
                    self.send(d, Message::choice(self.civ(*site, d), branch), out);
                }
            }
            Instr::EnterCheckpoint { site, rescue, exit } => {
                let seq = self.counters.entry(*site).or_default();
                *seq += 1;
                let instance = CkptInstanceId { site: *site, seq: *seq };
                self.stack.push(Arc::new(Frame::Checkpoint {
                    instance,
                    saved: self.vars.clone(),
                    counters: self.counters.clone(),
                    rescue: rescue.clone(),
                    exit: exit.clone(),
                    rescuing: false,
                }));
                trace!(
                    self,
                    out,
                    TraceKind::CheckpointEnter { instance: instance.to_string(), vars: self.vars.clone() }
                );
                let snapshot =
                    Snapshot { stack: self.stack.clone(), vars: self.vars.clone(), counters: self.counters.clone() };
                out.push(Effect::Monitor(MonitorInput::Checkpoint {
                    role: self.role.clone(),
                    epoch: self.epoch,
                    instance,
                    snapshot,
                }));
            }
            Instr::ExitCheckpoint { site } => {
                let Some(instance) = self.top_instance().filter(|i| i.site == *site) else {
                    return Err(format!("exit of {site} without its frame on top"));
                };
                trace!(self, out, TraceKind::Done { instance: instance.to_string() });
                out.push(Effect::Monitor(MonitorInput::Done { role: self.role.clone(), epoch: self.epoch, instance }));
            }
        }
        Ok(())
    }

    fn call(
        &mut self,
        name: &str,
        arity: usize,
        args: &[crate::lang::ast::Expr],
        ret: &Token,
        tail: bool,
    ) -> Result<(), String> {
        let vals = args.iter().map(|a| self.eval(a)).collect::<Result<Vec<_>, _>>()?;
        let clauses = self
            .prog
            .functions
            .get(&(name.to_string(), arity))
            .ok_or_else(|| format!("undefined choreography {name}/{arity}"))?;
        let (env, entry) = clauses
            .iter()
            .find_map(|c| bind_all(&c.params, &vals).map(|env| (env, c.entry.clone())))
            .ok_or_else(|| EvalError::NoClause(name.to_string(), arity).to_string())?;
        if !tail {
            let live = &self.prog.block(ret).live_in;
            let saved =
                self.vars.iter().filter(|(k, _)| live.contains(*k)).map(|(k, v)| (k.clone(), v.clone())).collect();
            self.stack.push(Arc::new(Frame::Return { ret: ret.clone(), saved }));
        }
        self.vars = env;
        self.set_current(entry);
        Ok(())
    }

    fn terminate(&mut self, term: &Terminator, out: &mut Vec<Effect>) -> Result<(), String> {
        match term {
            Terminator::Goto(t) => self.set_current(t.clone()),
            Terminator::Branch { var, then_t, else_t } => {
                let b = self.vars.get(var).is_some_and(Value::truthy);
                self.set_current(if b { then_t.clone() } else { else_t.clone() });
            }
            Terminator::Call { fname, arity, args, ret, tail } => self.call(fname, *arity, args, ret, *tail)?,
            Terminator::CallIndirect { var, args, ret, tail } => match self.vars.get(var) {
                Some(Value::FuncRef { name, arity }) if *arity as usize == args.len() => {
                    let name = name.clone();
                    self.call(&name, args.len(), args, ret, *tail)?
                }
                Some(other) => {
                    return Err(
                        EvalError::Type(format!("cannot call {other} with {} arguments", args.len())).to_string()
                    )
                }
                None => return Err(EvalError::Unbound(var.clone()).to_string()),
            },
            Terminator::Return(e) | Terminator::Finish(e) => {
                let v = self.eval(e)?;
                match self.stack.pop() {
                    None => {
                        trace!(self, out, TraceKind::Finish { value: v.clone() });
                        out.push(Effect::Monitor(MonitorInput::Finished { role: self.role.clone(), value: v }));
                        self.status = Status::Finished;
                    }
                    Some(f) => {
                        let Frame::Return { ret, saved } = &*f else {
                            return Err(format!(
                                "return with checkpoint frame {} on top",
                                f.instance().expect("checkpoint")
                            ));
                        };
                        self.vars = saved.clone();
                        if let Entry::Landing { bind: Some(p) } = &self.prog.block(ret).entry {
                            let b = match_pattern(p, &v, &self.vars)
                                .ok_or_else(|| EvalError::MatchFailure(v.clone()).to_string())?;
                            self.vars.extend(b);
                        }
                        self.set_current(ret.clone());
                    }
                }
            }
        }
        Ok(())
    }

    fn on_control(&mut self, m: Message, out: &mut Vec<Effect>) {
        match m.mtype {
            MessageType::Barrier => {
                let (Ok(instance), Some(civ)) = (instance_from_value(&m.payload), &m.civ) else {
                    return self.violation(format!("malformed barrier {}", m.payload), out);
                };
                if civ.epoch < self.epoch {
                    self.stale += 1;
                    return;
                }
                self.barriers.push((instance, civ.epoch));
            }
            MessageType::Recover => {
                let parsed = m.payload.as_tuple().and_then(|t| match t {
                    [config, inst, Value::Int(e)] => Some((
                        RouteTable::from_value(config).ok()?,
                        instance_from_value(inst).ok()?,
                        u32::try_from(*e).ok()?,
                    )),
                    _ => None,
                });
                let Some((config, instance, epoch)) = parsed else {
                    return self.violation(format!("malformed recover {}", m.payload), out);
                };
                if epoch < self.epoch {
                    self.stale += 1;
                    return;
                }
                self.routes = config;
                if epoch > self.epoch {
                    self.unwind(instance, epoch, out);
                }
            }
            MessageType::Revive => {
                let parsed = m.payload.as_tuple().and_then(|t| match t {
                    [snap, config, inst, Value::Int(e)] => Some((
                        snapshot_from_value(snap).ok()?,
                        RouteTable::from_value(config).ok()?,
                        instance_from_value(inst).ok()?,
                        u32::try_from(*e).ok()?,
                    )),
                    _ => None,
                });
                let Some((snap, config, instance, epoch)) = parsed else {
                    return self.violation("malformed revive".into(), out);
                };
                if self.status != Status::Fresh {
                    return self.violation("revive of a live actor".into(), out);
                }
                self.stack = snap.stack;
                self.vars = snap.vars;
                self.counters = snap.counters;
                self.routes = config;
                trace!(self, out, TraceKind::Revive { instance: instance.to_string() });
                self.unwind(instance, epoch, out);
            }
            MessageType::Chorex | MessageType::Choice => unreachable!("not a control message"),
        }
    }

    fn unwind(&mut self, instance: CkptInstanceId, epoch: u32, out: &mut Vec<Effect>) {
        let Some(i) = self.stack.iter().rposition(|f| f.instance() == Some(instance)) else {
            return self.violation(format!("no frame for {instance} to unwind to"), out);
        };
        self.stack.truncate(i + 1);
        let Frame::Checkpoint { saved, counters, rescue, exit, .. } = &*self.stack[i] else {
            unreachable!("instance() is only set on checkpoint frames")
        };
        let frame = Frame::Checkpoint {
            instance,
            saved: saved.clone(),
            counters: counters.clone(),
            rescue: rescue.clone(),
            exit: exit.clone(),
            rescuing: true,
        };
        self.vars = saved.clone();
        self.counters = counters.clone();
        let rescue = rescue.clone();
        self.stack[i] = Arc::new(frame);
        self.epoch = epoch;
        let before = self.inbox.len();
        self.inbox.retain(|m| m.civ.as_ref().is_some_and(|c| c.epoch >= epoch));
        self.stale += (before - self.inbox.len()) as u64;
        self.barriers.retain(|(_, e)| *e >= epoch);
        trace!(self, out, TraceKind::RescueEnter { instance: instance.to_string(), vars: self.vars.clone() });
        self.set_current(rescue);
    }
}
