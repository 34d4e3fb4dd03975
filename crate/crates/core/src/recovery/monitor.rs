//! The per-session monitor: checkpoint records, barriers, crash recovery.
//!
//! The monitor is a plain state machine. Drivers feed it [`MonitorInput`]s in
//! the order each actor produced them and carry out the returned outputs.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::delta::{apply_in_place, compute_delta, full_copy, StackDelta};
use crate::lang::ast::{Role, SiteId};
use crate::runtime::state::{instance_to_value, snapshot_to_value, CkptInstanceId, Snapshot};
use crate::runtime::trace::Clock;
use crate::transport::{Address, RouteTable};
use crate::value::Value;
use crate::wire::{CivToken, Message, MessageType, SessionToken, MONITOR};

#[derive(Clone, Debug, PartialEq)]
pub enum MonitorInput {
    /// The actor entered `instance`; `snapshot` is its state with the new
    /// checkpoint frame on top.
    Checkpoint {
        role: Role,
        epoch: u32,
        instance: CkptInstanceId,
        snapshot: Snapshot,
    },
    /// The actor finished the body (or rescue) of `instance` and waits at its barrier.
    Done {
        role: Role,
        epoch: u32,
        instance: CkptInstanceId,
    },
    Crash {
        role: Role,
        epoch: u32,
        innermost: Option<CkptInstanceId>,
        in_rescue: bool,
        reason: String,
    },
    /// The actor received a control message it cannot honour.
    Violation {
        role: Role,
        reason: String,
    },
    Finished {
        role: Role,
        value: Value,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum MonitorOutput {
    Control { role: Role, to: Address, msg: Message },
    Abort { reason: String },
}

/// Creates replacement actors.
pub trait Spawner {
    /// Start a fresh actor for `role` that waits for a `revive` message.
    fn spawn(&mut self, role: &Role) -> Address;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AuditRecord {
    pub t: u64,
    pub event: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance: Option<String>,
    pub epoch: u32,
    /// Frames held in checkpoint records after the event.
    pub stored_frames: usize,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Clone, Debug)]
struct Record {
    instance: CkptInstanceId,
    delta: StackDelta,
}

pub struct Monitor {
    session: SessionToken,
    roles: Vec<Role>,
    deltas: bool,
    clock: Clock,
    epoch: u32,
    routes: RouteTable,
    chains: BTreeMap<Role, Vec<Record>>,
    /// Reconstruction of each chain's last record. Shares frames with the chain.
    tops: BTreeMap<Role, Snapshot>,
    done: BTreeMap<CkptInstanceId, BTreeSet<Role>>,
    /// Crashed roles awaiting recovery, with their innermost open instance.
    pending: BTreeMap<Role, CkptInstanceId>,
    last_target: Option<CkptInstanceId>,
    finished: BTreeMap<Role, Value>,
    aborted: Option<String>,
    stored: usize,
    peak: usize,
    recoveries: u32,
    audit_on: bool,
    audit: Vec<AuditRecord>,
}

impl Monitor {
    pub fn new(session: SessionToken, roles: Vec<Role>, routes: RouteTable, deltas: bool, clock: Clock) -> Monitor {
        Monitor {
            session,
            chains: roles.iter().map(|r| (r.clone(), Vec::new())).collect(),
            tops: roles.iter().map(|r| (r.clone(), Snapshot::default())).collect(),
            roles,
            deltas,
            clock,
            epoch: 0,
            routes,
            done: BTreeMap::new(),
            pending: BTreeMap::new(),
            last_target: None,
            finished: BTreeMap::new(),
            aborted: None,
            stored: 0,
            peak: 0,
            recoveries: 0,
            audit_on: true,
            audit: Vec::new(),
        }
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn routes(&self) -> &RouteTable {
        &self.routes
    }

    pub fn recoveries(&self) -> u32 {
        self.recoveries
    }

    /// Frames currently held in checkpoint records.
    pub fn stored_frames(&self) -> usize {
        self.stored
    }

    pub fn peak_stored_frames(&self) -> usize {
        self.peak
    }

    pub fn results(&self) -> &BTreeMap<Role, Value> {
        &self.finished
    }

    pub fn is_complete(&self) -> bool {
        self.finished.len() == self.roles.len()
    }

    pub fn aborted(&self) -> Option<&str> {
        self.aborted.as_deref()
    }

    /// Turn audit logging on or off (on by default).
    pub fn set_audit(&mut self, on: bool) {
        self.audit_on = on;
    }

    pub fn take_audit(&mut self) -> Vec<AuditRecord> {
        std::mem::take(&mut self.audit)
    }

    /// Number of checkpoint records held for `role`.
    pub fn chain_len(&self, role: &Role) -> usize {
        self.chains.get(role).map_or(0, Vec::len)
    }

    fn log(&mut self, event: &'static str, role: Option<&Role>, instance: Option<CkptInstanceId>, detail: String) {
        self.log_with(event, role, instance, || detail);
    }

    fn log_with(
        &mut self,
        event: &'static str,
        role: Option<&Role>,
        instance: Option<CkptInstanceId>,
        detail: impl FnOnce() -> String,
    ) {
        if !self.audit_on {
            return;
        }
        self.audit.push(AuditRecord {
            t: self.clock.tick(),
            event,
            role: role.map(|r| r.to_string()),
            instance: instance.map(|i| i.to_string()),
            epoch: self.epoch,
            stored_frames: self.stored,
            detail: detail(),
        });
    }

    fn civ(&self, role: &Role, site: u32) -> CivToken {
        CivToken {
            session: self.session,
            site: SiteId(site),
            epoch: self.epoch,
            sender: Role::from(MONITOR),
            receiver: role.clone(),
        }
    }

    fn control(&self, role: &Role, mtype: MessageType, instance: CkptInstanceId, payload: Value) -> MonitorOutput {
        let to = self.routes.get(role).expect("every role has a route").clone();
        MonitorOutput::Control {
            role: role.clone(),
            to,
            msg: Message { mtype, civ: Some(self.civ(role, instance.site.0)), payload },
        }
    }

    fn abort(&mut self, reason: String) -> Vec<MonitorOutput> {
        if self.aborted.is_some() {
            return Vec::new();
        }
        self.log("abort", None, None, reason.clone());
        self.aborted = Some(reason.clone());
        vec![MonitorOutput::Abort { reason }]
    }

    pub fn handle(&mut self, input: MonitorInput, spawner: &mut dyn Spawner) -> Vec<MonitorOutput> {
        if self.aborted.is_some() {
            return Vec::new();
        }
        match input {
            MonitorInput::Checkpoint { role, epoch, instance, snapshot } => {
                self.on_checkpoint(role, epoch, instance, snapshot);
                self.try_recover(spawner)
            }
            MonitorInput::Done { role, epoch, instance } => self.on_done(role, epoch, instance),
            MonitorInput::Crash { role, epoch, innermost, in_rescue, reason } => {
                self.on_crash(role, epoch, innermost, in_rescue, reason, spawner)
            }
            MonitorInput::Violation { role, reason } => {
                self.log("violation", Some(&role), None, reason.clone());
                self.abort(format!("protocol violation at {role}: {reason}"))
            }
            MonitorInput::Finished { role, value } => {
                self.log("finish", Some(&role), None, value.to_string());
                self.finished.insert(role, value);
                Vec::new()
            }
        }
    }

    fn on_checkpoint(&mut self, role: Role, epoch: u32, instance: CkptInstanceId, snapshot: Snapshot) {
        if epoch < self.epoch {
            self.log("stale", Some(&role), Some(instance), format!("checkpoint from epoch {epoch}"));
            return;
        }
        let delta = if self.deltas { compute_delta(&self.tops[&role], &snapshot) } else { full_copy(&snapshot) };
        self.stored += delta.frames();
        self.peak = self.peak.max(self.stored);
        let (base_len, added) = (delta.base_len, delta.frames());
        self.chains.get_mut(&role).expect("known role").push(Record { instance, delta });
        self.tops.insert(role.clone(), snapshot);
        self.log_with("checkpoint", Some(&role), Some(instance), || format!("base_len={base_len} added={added}"));
    }

    fn on_done(&mut self, role: Role, epoch: u32, instance: CkptInstanceId) -> Vec<MonitorOutput> {
        if epoch < self.epoch {
            self.log("stale", Some(&role), Some(instance), format!("done from epoch {epoch}"));
            return Vec::new();
        }
        if !self.chains[&role].iter().any(|r| r.instance == instance) {
            self.log("unknown", Some(&role), Some(instance), "done for unknown instance".into());
            return Vec::new();
        }
        self.log("done", Some(&role), Some(instance), String::new());
        let set = self.done.entry(instance).or_default();
        set.insert(role);
        if set.len() < self.roles.len() {
            return Vec::new();
        }
        self.done.remove(&instance);
        for r in self.roles.clone() {
            self.truncate(&r, |recs| recs.iter().position(|x| x.instance == instance));
        }
        self.log("barrier", None, Some(instance), String::new());
        let payload = instance_to_value(instance);
        self.roles.iter().map(|r| self.control(r, MessageType::Barrier, instance, payload.clone())).collect()
    }

    /// Drop the records of `role` from the index returned by `from` upward.
    fn truncate(&mut self, role: &Role, from: impl Fn(&[Record]) -> Option<usize>) {
        let chain = self.chains.get_mut(role).expect("known role");
        let Some(i) = from(chain) else { return };
        if i >= chain.len() {
            return;
        }
        self.stored -= chain[i..].iter().map(|r| r.delta.frames()).sum::<usize>();
        chain.truncate(i);
        // Replay from the last self-contained record.
        let start = chain.iter().rposition(|r| r.delta.full).unwrap_or(0);
        let mut top = Snapshot::default();
        for r in &chain[start..] {
            apply_in_place(&mut top, &r.delta);
        }
        self.tops.insert(role.clone(), top);
    }

    fn depth(&self, role: &Role, instance: CkptInstanceId) -> Option<usize> {
        self.chains[role].iter().position(|r| r.instance == instance)
    }

    fn on_crash(
        &mut self,
        role: Role,
        epoch: u32,
        innermost: Option<CkptInstanceId>,
        in_rescue: bool,
        reason: String,
        spawner: &mut dyn Spawner,
    ) -> Vec<MonitorOutput> {
        self.log("crash", Some(&role), innermost, format!("epoch {epoch}: {reason}"));
        if epoch < self.epoch {
            // The actor died before it saw the latest recover; revive it
            // straight into that recovery.
            let Some(target) = self.last_target else {
                return self.abort(format!("{role} crashed at stale epoch {epoch} with no recovery in place"));
            };
            if self.depth(&role, target).is_none() {
                return self.abort(format!("{role} has no record for {target}"));
            }
            let mut out = self.revive(&role, target, spawner);
            let payload = self.recover_payload(target);
            for r in self.roles.clone() {
                if r != role && !self.finished.contains_key(&r) && !self.pending.contains_key(&r) {
                    out.push(self.control(&r, MessageType::Recover, target, payload.clone()));
                }
            }
            return out;
        }
        if in_rescue {
            return self.abort(format!("{role} crashed inside a rescue block: {reason}"));
        }
        let Some(target) = self.chains[&role].last().map(|r| r.instance) else {
            return self.abort(format!("{role} crashed outside any checkpoint: {reason}"));
        };
        if innermost.is_some_and(|i| i != target) {
            return self.abort(format!("{role} reported {innermost:?} but the monitor holds {target}"));
        }
        self.pending.insert(role, target);
        self.try_recover(spawner)
    }

    fn recover_payload(&self, target: CkptInstanceId) -> Value {
        Value::Tuple(vec![self.routes.to_value(), instance_to_value(target), Value::Int(self.epoch as i64)])
    }

    fn revive(&mut self, role: &Role, target: CkptInstanceId, spawner: &mut dyn Spawner) -> Vec<MonitorOutput> {
        let addr = spawner.spawn(role);
        self.routes.update_route(role, addr.clone()).expect("known role");
        let snap = self.tops[role].clone();
        self.log("revive", Some(role), Some(target), addr.to_string());
        let payload = Value::Tuple(vec![
            snapshot_to_value(&snap),
            self.routes.to_value(),
            instance_to_value(target),
            Value::Int(self.epoch as i64),
        ]);
        vec![MonitorOutput::Control {
            role: role.clone(),
            to: addr,
            msg: Message { mtype: MessageType::Revive, civ: None, payload },
        }]
    }

    fn try_recover(&mut self, spawner: &mut dyn Spawner) -> Vec<MonitorOutput> {
        // Recover to the outermost instance any pending crash needs.
        let Some((role, target)) = self
            .pending
            .iter()
            .min_by_key(|(r, i)| self.depth(r, **i).unwrap_or(usize::MAX))
            .map(|(r, i)| (r.clone(), *i))
        else {
            return Vec::new();
        };
        let depth = self.depth(&role, target).expect("pending target is recorded");
        if !self.roles.iter().all(|r| self.depth(r, target) == Some(depth)) {
            return Vec::new();
        }
        self.epoch += 1;
        self.recoveries += 1;
        for r in self.roles.clone() {
            self.truncate(&r, |_| Some(depth + 1));
        }
        self.done.retain(|i, _| *i != target);
        let keep: BTreeSet<CkptInstanceId> = self.chains.values().flat_map(|c| c.iter().map(|r| r.instance)).collect();
        self.done.retain(|i, _| keep.contains(i));
        let crashed: Vec<Role> = std::mem::take(&mut self.pending).into_keys().collect();
        self.log("recover", Some(&role), Some(target), format!("crashed: {}", crashed.len()));
        // Spawn first so the broadcast config has every new address.
        let addrs: Vec<Address> = crashed.iter().map(|r| spawner.spawn(r)).collect();
        for (r, a) in crashed.iter().zip(&addrs) {
            self.routes.update_route(r, a.clone()).expect("known role");
        }
        let mut out = Vec::new();
        for (r, a) in crashed.iter().zip(addrs) {
            let snap = self.tops[r].clone();
            self.log("revive", Some(r), Some(target), a.to_string());
            let payload = Value::Tuple(vec![
                snapshot_to_value(&snap),
                self.routes.to_value(),
                instance_to_value(target),
                Value::Int(self.epoch as i64),
            ]);
            out.push(MonitorOutput::Control {
                role: r.clone(),
                to: a,
                msg: Message { mtype: MessageType::Revive, civ: None, payload },
            });
        }
        let payload = self.recover_payload(target);
        for r in self.roles.clone() {
            if !crashed.contains(&r) && !self.finished.contains_key(&r) {
                out.push(self.control(&r, MessageType::Recover, target, payload.clone()));
            }
        }
        self.last_target = Some(target);
        out
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::lang::ast::CheckpointSiteId;
    use crate::project::Token;
    use crate::runtime::state::Frame;

    struct Slots(u64);

    impl Spawner for Slots {
        fn spawn(&mut self, _: &Role) -> Address {
            self.0 += 1;
            Address::Mem { slot: 100 + self.0 }
        }
    }

    fn roles() -> Vec<Role> {
        vec![Role::from("A"), Role::from("B")]
    }

    fn monitor(deltas: bool) -> Monitor {
        let routes =
            RouteTable::new(roles().into_iter().enumerate().map(|(i, r)| (r, Address::Mem { slot: i as u64 })));
        Monitor::new(SessionToken(9), roles(), routes, deltas, Clock::default())
    }

    fn inst(seq: u32) -> CkptInstanceId {
        CkptInstanceId { site: CheckpointSiteId(0), seq }
    }

    fn tok(n: u32) -> Token {
        Token { fname: "run".into(), arity: 0, ordinal: n, role: "A".into() }
    }

    fn ckpt(i: CkptInstanceId) -> Arc<Frame> {
        Arc::new(Frame::Checkpoint {
            instance: i,
            saved: Default::default(),
            counters: Default::default(),
            rescue: tok(1),
            exit: tok(2),
            rescuing: false,
        })
    }

    fn enter(m: &mut Monitor, role: &str, stack: Vec<Arc<Frame>>, s: &mut Slots) {
        let instance = stack.last().unwrap().instance().unwrap();
        let snapshot = Snapshot { stack, ..Default::default() };
        let out =
            m.handle(MonitorInput::Checkpoint { role: Role::from(role), epoch: m.epoch(), instance, snapshot }, s);
        assert!(out.is_empty());
    }

    fn done(m: &mut Monitor, role: &str, i: CkptInstanceId, s: &mut Slots) -> Vec<MonitorOutput> {
        m.handle(MonitorInput::Done { role: Role::from(role), epoch: m.epoch(), instance: i }, s)
    }

    fn crash(m: &mut Monitor, role: &str, epoch: u32, s: &mut Slots) -> Vec<MonitorOutput> {
        m.handle(
            MonitorInput::Crash {
                role: Role::from(role),
                epoch,
                innermost: None,
                in_rescue: false,
                reason: "boom".into(),
            },
            s,
        )
    }

    fn kinds(out: &[MonitorOutput]) -> Vec<(String, MessageType)> {
        out.iter()
            .map(|o| match o {
                MonitorOutput::Control { role, msg, .. } => (role.to_string(), msg.mtype),
                MonitorOutput::Abort { .. } => ("abort".into(), MessageType::Revive),
            })
            .collect()
    }

    #[test]
    fn barrier_only_after_every_role_is_done() {
        let mut s = Slots(0);
        let mut m = monitor(true);
        enter(&mut m, "A", vec![ckpt(inst(1))], &mut s);
        enter(&mut m, "B", vec![ckpt(inst(1))], &mut s);
        assert!(done(&mut m, "A", inst(1), &mut s).is_empty());
        let out = done(&mut m, "B", inst(1), &mut s);
        assert_eq!(kinds(&out), vec![("A".into(), MessageType::Barrier), ("B".into(), MessageType::Barrier)]);
        assert_eq!(m.stored_frames(), 0);
        assert_eq!(m.chain_len(&Role::from("A")), 0);
    }

    #[test]
    fn crash_revives_and_broadcasts_recover() {
        let mut s = Slots(0);
        let mut m = monitor(true);
        enter(&mut m, "A", vec![ckpt(inst(1))], &mut s);
        enter(&mut m, "B", vec![ckpt(inst(1))], &mut s);
        let out = crash(&mut m, "A", 0, &mut s);
        assert_eq!(kinds(&out), vec![("A".into(), MessageType::Revive), ("B".into(), MessageType::Recover)]);
        assert_eq!(m.epoch(), 1);
        assert_eq!(m.routes().get(&Role::from("A")), Some(&Address::Mem { slot: 101 }));
        // A done from the aborted attempt is ignored.
        let stale = m.handle(MonitorInput::Done { role: Role::from("B"), epoch: 0, instance: inst(1) }, &mut s);
        assert!(stale.is_empty());
    }

    #[test]
    fn recovery_waits_for_every_record() {
        let mut s = Slots(0);
        let mut m = monitor(true);
        enter(&mut m, "A", vec![ckpt(inst(1))], &mut s);
        assert!(crash(&mut m, "A", 0, &mut s).is_empty());
        let out = m.handle(
            MonitorInput::Checkpoint {
                role: Role::from("B"),
                epoch: 0,
                instance: inst(1),
                snapshot: Snapshot { stack: vec![ckpt(inst(1))], ..Default::default() },
            },
            &mut s,
        );
        assert_eq!(kinds(&out), vec![("A".into(), MessageType::Revive), ("B".into(), MessageType::Recover)]);
    }

    #[test]
    fn crash_outside_checkpoint_aborts() {
        let mut s = Slots(0);
        let mut m = monitor(true);
        let out = crash(&mut m, "B", 0, &mut s);
        assert!(matches!(out[..], [MonitorOutput::Abort { .. }]));
        assert!(m.aborted().is_some());
    }

    #[test]
    fn crash_in_rescue_aborts() {
        let mut s = Slots(0);
        let mut m = monitor(true);
        enter(&mut m, "A", vec![ckpt(inst(1))], &mut s);
        enter(&mut m, "B", vec![ckpt(inst(1))], &mut s);
        crash(&mut m, "A", 0, &mut s);
        let out = m.handle(
            MonitorInput::Crash {
                role: Role::from("B"),
                epoch: 1,
                innermost: Some(inst(1)),
                in_rescue: true,
                reason: "x".into(),
            },
            &mut s,
        );
        assert!(matches!(out[..], [MonitorOutput::Abort { .. }]));
    }

    #[test]
    fn stale_crash_joins_current_recovery() {
        let mut s = Slots(0);
        let mut m = monitor(true);
        enter(&mut m, "A", vec![ckpt(inst(1))], &mut s);
        enter(&mut m, "B", vec![ckpt(inst(1))], &mut s);
        crash(&mut m, "A", 0, &mut s);
        let out = crash(&mut m, "B", 0, &mut s);
        assert_eq!(kinds(&out), vec![("B".into(), MessageType::Revive), ("A".into(), MessageType::Recover)]);
        assert_eq!(m.epoch(), 1);
        assert_eq!(m.recoveries(), 1);
    }

    #[test]
    fn nested_records_are_linear_with_deltas_and_quadratic_without() {
        // Record k holds a stack of 2k-1 frames, two of them new.
        for (deltas, expected) in [(true, 1 + 2 * 49), (false, 50 * 50)] {
            let mut s = Slots(0);
            let mut m = monitor(deltas);
            let mut stack = Vec::new();
            for k in 1..=50 {
                if k > 1 {
                    stack.push(Arc::new(Frame::Return { ret: tok(k), saved: Default::default() }));
                }
                stack.push(ckpt(inst(k)));
                enter(&mut m, "A", stack.clone(), &mut s);
            }
            assert_eq!(m.peak_stored_frames(), expected);
        }
    }
}
