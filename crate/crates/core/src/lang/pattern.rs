use std::collections::BTreeSet;

use super::ast::Pattern;
use crate::value::{Value, Vars};

/// Variables a pattern binds and pinned variables it reads.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PatternVars {
    pub bound: BTreeSet<String>,
    pub used: BTreeSet<String>,
}

pub fn pattern_vars(p: &Pattern) -> PatternVars {
    let mut out = PatternVars::default();
    walk(p, &mut out);
    out
}

fn walk(p: &Pattern, out: &mut PatternVars) {
    match p {
        Pattern::Lit(_) | Pattern::Wildcard => {}
        Pattern::Var(v) => {
            out.bound.insert(v.clone());
        }
        Pattern::Pin(v) => {
            out.used.insert(v.clone());
        }
        Pattern::Tuple(items) | Pattern::List(items) => items.iter().for_each(|i| walk(i, out)),
    }
}

/// Match `value` against `pat`. Pins are resolved in `env`; on success the
/// new bindings are returned (repeated names must bind equal values).
pub fn match_pattern(pat: &Pattern, value: &Value, env: &Vars) -> Option<Vars> {
    let mut binds = Vars::new();
    if go(pat, value, env, &mut binds) {
        Some(binds)
    } else {
        None
    }
}

fn go(pat: &Pattern, value: &Value, env: &Vars, binds: &mut Vars) -> bool {
    match pat {
        Pattern::Wildcard => true,
        Pattern::Lit(l) => l == value,
        Pattern::Pin(v) => env.get(v) == Some(value),
        Pattern::Var(v) => match binds.get(v) {
            Some(prev) => prev == value,
            None => {
                binds.insert(v.clone(), value.clone());
                true
            }
        },
        Pattern::Tuple(ps) => match value {
            Value::Tuple(vs) if vs.len() == ps.len() => ps.iter().zip(vs).all(|(p, v)| go(p, v, env, binds)),
            _ => false,
        },
        Pattern::List(ps) => match value {
            Value::List(vs) if vs.len() == ps.len() => ps.iter().zip(vs).all(|(p, v)| go(p, v, env, binds)),
            _ => false,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(s: &str) -> Pattern {
        Pattern::Var(s.into())
    }

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn repeated_and_pinned() {
        let p = Pattern::List(vec![var("x"), Pattern::Pin("y".into()), var("x")]);
        let pv = pattern_vars(&p);
        assert_eq!(pv.bound, set(&["x"]));
        assert_eq!(pv.used, set(&["y"]));
    }

    #[test]
    fn wildcard_binds_nothing() {
        assert_eq!(pattern_vars(&Pattern::Wildcard), PatternVars::default());
    }

    #[test]
    fn nested_pin_of_bound_name() {
        // {a, {^a, b}}
        let p = Pattern::Tuple(vec![var("a"), Pattern::Tuple(vec![Pattern::Pin("a".into()), var("b")])]);
        let pv = pattern_vars(&p);
        assert_eq!(pv.bound, set(&["a", "b"]));
        assert_eq!(pv.used, set(&["a"]));
    }

    #[test]
    fn matching_semantics() {
        let p = Pattern::List(vec![var("x"), Pattern::Pin("y".into()), var("x")]);
        let mut env = Vars::new();
        env.insert("y".into(), Value::Int(42));
        let ok = Value::List(vec![Value::Int(1), Value::Int(42), Value::Int(1)]);
        let hi = Value::List(vec![Value::str("hi"), Value::Int(42), Value::str("hi")]);
        let bad = Value::List(vec![Value::Int(1), Value::Int(42), Value::Int(2)]);
        assert_eq!(match_pattern(&p, &ok, &env).unwrap()["x"], Value::Int(1));
        assert!(match_pattern(&p, &hi, &env).is_some());
        assert!(match_pattern(&p, &bad, &env).is_none());
        assert!(match_pattern(&p, &ok, &Vars::new()).is_none());
    }
}
