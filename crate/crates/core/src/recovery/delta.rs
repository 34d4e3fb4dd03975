//! Stack deltas between consecutive checkpoint snapshots of one role.

use std::sync::Arc;

use crate::runtime::state::{Counters, Frame, Snapshot};
use crate::value::Vars;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StackDelta {
    /// Length of the stack prefix shared with the previous snapshot.
    pub base_len: usize,
    /// Frames above the shared prefix.
    pub added: Vec<Arc<Frame>>,
    /// Bindings that are new or changed.
    pub vars_set: Vars,
    pub vars_removed: Vec<String>,
    /// Counters are a handful of integers; they are stored whole.
    pub counters: Counters,
    /// Self-contained: applies without any previous snapshot.
    pub full: bool,
}

impl StackDelta {
    pub fn frames(&self) -> usize {
        self.added.len()
    }
}

fn same(a: &Arc<Frame>, b: &Arc<Frame>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

pub fn compute_delta(prev: &Snapshot, cur: &Snapshot) -> StackDelta {
    let base_len = prev.stack.iter().zip(&cur.stack).take_while(|(a, b)| same(a, b)).count();
    let vars_set =
        cur.vars.iter().filter(|(k, v)| prev.vars.get(*k) != Some(*v)).map(|(k, v)| (k.clone(), v.clone())).collect();
    let vars_removed = prev.vars.keys().filter(|k| !cur.vars.contains_key(*k)).cloned().collect();
    StackDelta {
        base_len,
        added: cur.stack[base_len..].to_vec(),
        vars_set,
        vars_removed,
        counters: cur.counters.clone(),
        full: false,
    }
}

pub fn apply_delta(prev: &Snapshot, d: &StackDelta) -> Snapshot {
    let mut s = prev.clone();
    apply_in_place(&mut s, d);
    s
}

/// [`apply_delta`] without copying the shared prefix.
pub fn apply_in_place(s: &mut Snapshot, d: &StackDelta) {
    if d.full {
        s.vars.clear();
    }
    s.stack.truncate(d.base_len);
    s.stack.extend(d.added.iter().cloned());
    for k in &d.vars_removed {
        s.vars.remove(k);
    }
    s.vars.extend(d.vars_set.iter().map(|(k, v)| (k.clone(), v.clone())));
    s.counters = d.counters.clone();
}

/// A self-contained record that copies every frame, as a store without delta
/// compression would.
pub fn full_copy(cur: &Snapshot) -> StackDelta {
    StackDelta {
        base_len: 0,
        added: cur.stack.iter().map(|f| Arc::new((**f).clone())).collect(),
        vars_set: cur.vars.clone(),
        vars_removed: Vec::new(),
        counters: cur.counters.clone(),
        full: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::project::Token;
    use crate::value::Value;

    fn ret(n: u32) -> Arc<Frame> {
        Arc::new(Frame::Return {
            ret: Token { fname: "f".into(), arity: 1, ordinal: n, role: "A".into() },
            saved: [("n".to_string(), Value::Int(n as i64))].into(),
        })
    }

    fn snap(frames: &[u32], vars: &[(&str, i64)]) -> Snapshot {
        Snapshot {
            stack: frames.iter().map(|n| ret(*n)).collect(),
            vars: vars.iter().map(|(k, v)| (k.to_string(), Value::Int(*v))).collect(),
            counters: Default::default(),
        }
    }

    #[test]
    fn identical_snapshots_give_empty_delta() {
        let a = snap(&[1, 2], &[("x", 1)]);
        let d = compute_delta(&a, &a);
        assert_eq!(d.base_len, 2);
        assert!(d.added.is_empty() && d.vars_set.is_empty() && d.vars_removed.is_empty());
    }

    #[test]
    fn one_more_frame_adds_exactly_it() {
        let a = snap(&[1, 2], &[("x", 1)]);
        let mut b = a.clone();
        b.stack.push(ret(3));
        b.vars.insert("y".into(), Value::Int(2));
        b.vars.remove("x");
        let d = compute_delta(&a, &b);
        assert_eq!(d.base_len, 2);
        assert_eq!(d.added, vec![ret(3)]);
        assert_eq!(d.vars_removed, vec!["x".to_string()]);
        assert_eq!(apply_delta(&a, &d), b);
    }

    #[test]
    fn first_record_is_a_full_snapshot() {
        let b = snap(&[4, 5], &[("z", 9)]);
        let d = compute_delta(&Snapshot::default(), &b);
        assert_eq!(d.base_len, 0);
        assert_eq!(d.frames(), 2);
        assert_eq!(apply_delta(&Snapshot::default(), &d), b);
    }

    #[test]
    fn diverging_stacks_share_only_the_prefix() {
        let a = snap(&[1, 2, 3], &[]);
        let b = snap(&[1, 9], &[]);
        let d = compute_delta(&a, &b);
        assert_eq!(d.base_len, 1);
        assert_eq!(apply_delta(&a, &d), b);
        let f = full_copy(&b);
        assert_eq!(apply_delta(&a, &f), b);
        assert!(!Arc::ptr_eq(&f.added[0], &b.stack[0]));
    }
}
