//! Execution traces: one event per observable actor step.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::Serialize;

use crate::value::{Value, Vars};

/// Shared logical clock. Every trace and audit event takes a fresh tick, so
/// events from all threads of a run are totally ordered.
#[derive(Clone, Debug, Default)]
pub struct Clock(Arc<AtomicU64>);

impl Clock {
    pub fn tick(&self) -> u64 {
        self.0.fetch_add(1, Ordering::SeqCst)
    }

    pub fn now(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceKind {
    Start {
        token: String,
    },
    /// A handler block started running.
    Exec {
        token: String,
    },
    Send {
        site: u32,
        to: String,
    },
    /// A message was accepted into the actor's queues.
    Arrive {
        mtype: &'static str,
        from: String,
        site: u32,
    },
    Recv {
        site: u32,
        from: String,
    },
    ChoiceSend {
        site: u32,
        branch: bool,
    },
    ChoiceRecv {
        site: u32,
        from: String,
        branch: bool,
    },
    CheckpointEnter {
        instance: String,
        #[serde(serialize_with = "ser_vars")]
        vars: Vars,
    },
    Done {
        instance: String,
    },
    BarrierPass {
        instance: String,
    },
    RescueEnter {
        instance: String,
        #[serde(serialize_with = "ser_vars")]
        vars: Vars,
    },
    Crash {
        reason: String,
    },
    Revive {
        instance: String,
    },
    Drop {
        mtype: &'static str,
        reason: String,
    },
    Finish {
        #[serde(serialize_with = "ser_value")]
        value: Value,
    },
}

fn ser_vars<S: serde::Serializer>(vars: &Vars, s: S) -> Result<S::Ok, S::Error> {
    s.collect_map(vars.iter().map(|(k, v)| (k, v.to_string())))
}

fn ser_value<S: serde::Serializer>(v: &Value, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&v.to_string())
}

impl TraceKind {
    pub fn name(&self) -> &'static str {
        match self {
            TraceKind::Start { .. } => "start",
            TraceKind::Exec { .. } => "exec",
            TraceKind::Send { .. } => "send",
            TraceKind::Arrive { .. } => "arrive",
            TraceKind::Recv { .. } => "recv",
            TraceKind::ChoiceSend { .. } => "choice_send",
            TraceKind::ChoiceRecv { .. } => "choice_recv",
            TraceKind::CheckpointEnter { .. } => "checkpoint_enter",
            TraceKind::Done { .. } => "done",
            TraceKind::BarrierPass { .. } => "barrier_pass",
            TraceKind::RescueEnter { .. } => "rescue_enter",
            TraceKind::Crash { .. } => "crash",
            TraceKind::Revive { .. } => "revive",
            TraceKind::Drop { .. } => "drop",
            TraceKind::Finish { .. } => "finish",
        }
    }

    /// The site or token column of the text form.
    pub fn subject(&self) -> String {
        match self {
            TraceKind::Start { token } | TraceKind::Exec { token } => token.clone(),
            TraceKind::Send { site, to } => format!("s{site} -> {to}"),
            TraceKind::Arrive { mtype, from, site } => format!("{mtype} s{site} <- {from}"),
            TraceKind::Recv { site, from } => format!("s{site} <- {from}"),
            TraceKind::ChoiceSend { site, branch } => format!("s{site} {branch}"),
            TraceKind::ChoiceRecv { site, from, branch } => format!("s{site} <- {from} {branch}"),
            TraceKind::CheckpointEnter { instance, .. }
            | TraceKind::Done { instance }
            | TraceKind::BarrierPass { instance }
            | TraceKind::RescueEnter { instance, .. }
            | TraceKind::Revive { instance } => instance.clone(),
            TraceKind::Crash { reason } => reason.clone(),
            TraceKind::Drop { mtype, reason } => format!("{mtype}: {reason}"),
            TraceKind::Finish { value } => value.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub time: u64,
    pub session: String,
    pub role: String,
    pub epoch: u32,
    #[serde(flatten)]
    pub kind: TraceKind,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.time, self.role, self.kind.name(), self.kind.subject())
    }
}

impl TraceEvent {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace events serialize")
    }
}
