//! Control-stack frames, snapshots, and their encoding as wire values.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::lang::ast::CheckpointSiteId;
use crate::project::Token;
use crate::value::{Value, Vars};

/// One dynamic entry into a checkpoint block. Every role entering the same
/// instance computes the same id because all roles pass through every
/// checkpoint in the same order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CkptInstanceId {
    pub site: CheckpointSiteId,
    pub seq: u32,
}

impl fmt::Display for CkptInstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.site, self.seq)
    }
}

/// Per-site entry counters.
pub type Counters = BTreeMap<CheckpointSiteId, u32>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Frame {
    /// Pushed by a non-tail call; `saved` holds the variables live at `ret`.
    Return { ret: Token, saved: Vars },
    Checkpoint {
        instance: CkptInstanceId,
        /// Full variable map at entry.
        saved: Vars,
        /// Entry counters at entry, so a rollback also rewinds instance numbering.
        counters: Counters,
        rescue: Token,
        exit: Token,
        /// Set once the actor has been diverted into the rescue block.
        rescuing: bool,
    },
}

impl Frame {
    pub fn instance(&self) -> Option<CkptInstanceId> {
        match self {
            Frame::Checkpoint { instance, .. } => Some(*instance),
            Frame::Return { .. } => None,
        }
    }
}

/// What the monitor stores for a role at checkpoint entry.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Snapshot {
    pub stack: Vec<Arc<Frame>>,
    pub vars: Vars,
    pub counters: Counters,
}

impl Snapshot {
    /// Innermost checkpoint instance on the stack.
    pub fn innermost(&self) -> Option<CkptInstanceId> {
        self.stack.iter().rev().find_map(|f| f.instance())
    }
}

fn s(x: &str) -> Value {
    Value::Str(x.to_string())
}

fn int(x: u32) -> Value {
    Value::Int(x as i64)
}

fn tuple(v: &Value) -> Result<&[Value], String> {
    v.as_tuple().ok_or_else(|| format!("expected tuple, got {v}"))
}

fn list(v: &Value) -> Result<&[Value], String> {
    v.as_list().ok_or_else(|| format!("expected list, got {v}"))
}

fn get_str(v: &Value) -> Result<&str, String> {
    v.as_str().ok_or_else(|| format!("expected string, got {v}"))
}

fn get_u32(v: &Value) -> Result<u32, String> {
    v.as_int().and_then(|i| u32::try_from(i).ok()).ok_or_else(|| format!("expected u32, got {v}"))
}

fn get_bool(v: &Value) -> Result<bool, String> {
    match v {
        Value::Bool(b) => Ok(*b),
        _ => Err(format!("expected bool, got {v}")),
    }
}

fn arity<const N: usize>(v: &Value) -> Result<&[Value; N], String> {
    tuple(v)?.try_into().map_err(|_| format!("expected {N}-tuple, got {v}"))
}

pub fn instance_to_value(i: CkptInstanceId) -> Value {
    Value::Tuple(vec![int(i.site.0), int(i.seq)])
}

pub fn instance_from_value(v: &Value) -> Result<CkptInstanceId, String> {
    let [site, seq] = arity::<2>(v)?;
    Ok(CkptInstanceId { site: CheckpointSiteId(get_u32(site)?), seq: get_u32(seq)? })
}

pub fn token_to_value(t: &Token) -> Value {
    Value::Tuple(vec![s(&t.fname), int(t.arity), int(t.ordinal), s(&t.role)])
}

pub fn token_from_value(v: &Value) -> Result<Token, String> {
    let [f, a, o, r] = arity::<4>(v)?;
    Ok(Token { fname: Arc::from(get_str(f)?), arity: get_u32(a)?, ordinal: get_u32(o)?, role: Arc::from(get_str(r)?) })
}

pub fn vars_to_value(vars: &Vars) -> Value {
    Value::List(vars.iter().map(|(k, v)| Value::Tuple(vec![s(k), v.clone()])).collect())
}

pub fn vars_from_value(v: &Value) -> Result<Vars, String> {
    list(v)?
        .iter()
        .map(|e| {
            let [k, x] = arity::<2>(e)?;
            Ok((get_str(k)?.to_string(), x.clone()))
        })
        .collect()
}

fn counters_to_value(c: &Counters) -> Value {
    Value::List(c.iter().map(|(k, n)| Value::Tuple(vec![int(k.0), int(*n)])).collect())
}

fn counters_from_value(v: &Value) -> Result<Counters, String> {
    list(v)?
        .iter()
        .map(|e| {
            let [k, n] = arity::<2>(e)?;
            Ok((CheckpointSiteId(get_u32(k)?), get_u32(n)?))
        })
        .collect()
}

pub fn frame_to_value(f: &Frame) -> Value {
    match f {
        Frame::Return { ret, saved } => {
            Value::Tuple(vec![Value::atom("ret"), token_to_value(ret), vars_to_value(saved)])
        }
        Frame::Checkpoint { instance, saved, counters, rescue, exit, rescuing } => Value::Tuple(vec![
            Value::atom("ckpt"),
            instance_to_value(*instance),
            vars_to_value(saved),
            counters_to_value(counters),
            token_to_value(rescue),
            token_to_value(exit),
            Value::Bool(*rescuing),
        ]),
    }
}

pub fn frame_from_value(v: &Value) -> Result<Frame, String> {
    let t = tuple(v)?;
    match t.first().and_then(|x| x.as_atom()) {
        Some("ret") if t.len() == 3 => {
            Ok(Frame::Return { ret: token_from_value(&t[1])?, saved: vars_from_value(&t[2])? })
        }
        Some("ckpt") if t.len() == 7 => Ok(Frame::Checkpoint {
            instance: instance_from_value(&t[1])?,
            saved: vars_from_value(&t[2])?,
            counters: counters_from_value(&t[3])?,
            rescue: token_from_value(&t[4])?,
            exit: token_from_value(&t[5])?,
            rescuing: get_bool(&t[6])?,
        }),
        _ => Err(format!("not a frame: {v}")),
    }
}

pub fn snapshot_to_value(snap: &Snapshot) -> Value {
    Value::Tuple(vec![
        Value::List(snap.stack.iter().map(|f| frame_to_value(f)).collect()),
        vars_to_value(&snap.vars),
        counters_to_value(&snap.counters),
    ])
}

pub fn snapshot_from_value(v: &Value) -> Result<Snapshot, String> {
    let [stack, vars, counters] = arity::<3>(v)?;
    Ok(Snapshot {
        stack: list(stack)?.iter().map(|f| frame_from_value(f).map(Arc::new)).collect::<Result<_, _>>()?,
        vars: vars_from_value(vars)?,
        counters: counters_from_value(counters)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(n: u32) -> Token {
        Token { fname: "run".into(), arity: 0, ordinal: n, role: "A".into() }
    }

    #[test]
    fn snapshot_value_round_trip() {
        let vars: Vars = [("x".to_string(), Value::Int(3)), ("%ret".to_string(), Value::Nil)].into();
        let inst = CkptInstanceId { site: CheckpointSiteId(2), seq: 7 };
        let snap = Snapshot {
            stack: vec![
                Arc::new(Frame::Return { ret: tok(1), saved: vars.clone() }),
                Arc::new(Frame::Checkpoint {
                    instance: inst,
                    saved: vars.clone(),
                    counters: [(CheckpointSiteId(2), 7)].into(),
                    rescue: tok(2),
                    exit: tok(3),
                    rescuing: false,
                }),
            ],
            vars,
            counters: [(CheckpointSiteId(2), 7)].into(),
        };
        let back = snapshot_from_value(&snapshot_to_value(&snap)).unwrap();
        assert_eq!(back, snap);
        assert_eq!(back.innermost(), Some(inst));
    }
}
