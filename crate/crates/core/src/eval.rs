//! Local expression evaluation and the per-role impl-function tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::lang::ast::{is_builtin, BinOp, Expr, ImplFunction, ImplModule, Role, UnOp};
use crate::lang::pattern::match_pattern;
use crate::value::{Value, Vars};
use crate::wire::codec::encode_value;

/// Why a local evaluation crashed.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("crash_if(true)")]
    ExplicitCrash,
    #[error("arithmetic overflow")]
    Overflow,
    #[error("type error: {0}")]
    Type(String),
    #[error("undefined variable \"{0}\"")]
    Unbound(String),
    #[error("undefined function {0}/{1}")]
    MissingFunction(String, usize),
    #[error("no clause of {0}/{1} matches its arguments")]
    NoClause(String, usize),
    #[error("no match of right hand side value {0}")]
    MatchFailure(Value),
    #[error("impl function {0} failed: {1}")]
    Native(String, String),
    #[error("impl call depth limit exceeded")]
    DepthLimit,
}

pub type NativeFn = Arc<dyn Fn(&[Value]) -> Result<Value, String> + Send + Sync>;

#[derive(Clone)]
enum ImplFn {
    Interpreted(Arc<ImplFunction>),
    Native(NativeFn),
}

/// The impl functions one role provides.
#[derive(Clone, Default)]
pub struct ImplTable {
    fns: BTreeMap<(String, usize), Vec<ImplFn>>,
}

impl fmt::Debug for ImplTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.fns.keys().map(|(n, a)| format!("{n}/{a}"))).finish()
    }
}

impl ImplTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, f: ImplFunction) {
        self.fns.entry((f.name.clone(), f.params.len())).or_default().push(ImplFn::Interpreted(Arc::new(f)));
    }

    /// Register a Rust closure as an impl function.
    pub fn define(
        &mut self,
        name: &str,
        arity: usize,
        f: impl Fn(&[Value]) -> Result<Value, String> + Send + Sync + 'static,
    ) -> &mut Self {
        self.fns.entry((name.to_string(), arity)).or_default().push(ImplFn::Native(Arc::new(f)));
        self
    }

    pub fn provides(&self, name: &str, arity: usize) -> bool {
        self.fns.contains_key(&(name.to_string(), arity))
    }

    pub fn signatures(&self) -> BTreeSet<(String, usize)> {
        self.fns.keys().cloned().collect()
    }
}

/// Impl tables for every role of a session.
#[derive(Clone, Debug, Default)]
pub struct ImplRegistry {
    tables: BTreeMap<Role, Arc<ImplTable>>,
}

impl ImplRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_modules(mods: impl IntoIterator<Item = ImplModule>) -> Self {
        let mut tables: BTreeMap<Role, ImplTable> = BTreeMap::new();
        for m in mods {
            let t = tables.entry(m.role).or_default();
            for f in m.functions {
                t.add(f);
            }
        }
        ImplRegistry { tables: tables.into_iter().map(|(r, t)| (r, Arc::new(t))).collect() }
    }

    pub fn insert(&mut self, role: Role, table: ImplTable) {
        self.tables.insert(role, Arc::new(table));
    }

    /// The role's table; roles without impls get an empty one.
    pub fn table(&self, role: &Role) -> Arc<ImplTable> {
        self.tables.get(role).cloned().unwrap_or_default()
    }

    pub fn roles(&self) -> impl Iterator<Item = &Role> {
        self.tables.keys()
    }
}

const MAX_DEPTH: usize = 2_000;

/// Evaluate a located expression against a role's variables and impl table.
pub fn eval_local(expr: &Expr, vars: &Vars, table: &ImplTable) -> Result<Value, EvalError> {
    Evaluator { table }.eval(expr, vars, 0)
}

/// FNV-1a 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// `hash64(v)`: strings hash their UTF-8 bytes, every other value hashes its
/// canonical wire encoding. The result is the 64-bit hash reinterpreted as a
/// signed integer.
pub fn hash64(v: &Value) -> i64 {
    let h = match v {
        Value::Str(s) => fnv1a64(s.as_bytes()),
        other => fnv1a64(&encode_value(other)),
    };
    h as i64
}

struct Evaluator<'a> {
    table: &'a ImplTable,
}

fn type_err(op: &str, a: &Value, b: &Value) -> EvalError {
    EvalError::Type(format!("{op} not defined for {} and {}", a.kind(), b.kind()))
}

impl Evaluator<'_> {
    fn eval(&self, e: &Expr, vars: &Vars, depth: usize) -> Result<Value, EvalError> {
        match e {
            Expr::Lit(v) => Ok(v.clone()),
            Expr::Var(v, _) => vars.get(v).cloned().ok_or_else(|| EvalError::Unbound(v.clone())),
            Expr::Tuple(items) => Ok(Value::Tuple(self.eval_all(items, vars, depth)?)),
            Expr::List(items) => Ok(Value::List(self.eval_all(items, vars, depth)?)),
            Expr::FuncRef(name, arity) => Ok(Value::FuncRef { name: name.clone(), arity: *arity }),
            Expr::Unary(op, inner) => {
                let v = self.eval(inner, vars, depth)?;
                match (op, v) {
                    (UnOp::Neg, Value::Int(i)) => i.checked_neg().map(Value::Int).ok_or(EvalError::Overflow),
                    (UnOp::Not, Value::Bool(b)) => Ok(Value::Bool(!b)),
                    (op, v) => Err(EvalError::Type(format!("{op:?} not defined for {}", v.kind()))),
                }
            }
            Expr::Binary(BinOp::And, a, b) => match self.eval(a, vars, depth)? {
                Value::Bool(false) => Ok(Value::Bool(false)),
                Value::Bool(true) => self.expect_bool("and", self.eval(b, vars, depth)?),
                other => Err(EvalError::Type(format!("and expects bool, got {}", other.kind()))),
            },
            Expr::Binary(BinOp::Or, a, b) => match self.eval(a, vars, depth)? {
                Value::Bool(true) => Ok(Value::Bool(true)),
                Value::Bool(false) => self.expect_bool("or", self.eval(b, vars, depth)?),
                other => Err(EvalError::Type(format!("or expects bool, got {}", other.kind()))),
            },
            Expr::Binary(op, a, b) => {
                let a = self.eval(a, vars, depth)?;
                let b = self.eval(b, vars, depth)?;
                binary(*op, a, b)
            }
            Expr::Call(name, args, _) => {
                let args = self.eval_all(args, vars, depth)?;
                self.call(name, &args, depth)
            }
        }
    }

    fn expect_bool(&self, op: &str, v: Value) -> Result<Value, EvalError> {
        match v {
            Value::Bool(_) => Ok(v),
            other => Err(EvalError::Type(format!("{op} expects bool, got {}", other.kind()))),
        }
    }

    fn eval_all(&self, items: &[Expr], vars: &Vars, depth: usize) -> Result<Vec<Value>, EvalError> {
        items.iter().map(|e| self.eval(e, vars, depth)).collect()
    }

    fn call(&self, name: &str, args: &[Value], depth: usize) -> Result<Value, EvalError> {
        if is_builtin(name, args.len()) {
            return builtin(name, args);
        }
        if depth >= MAX_DEPTH {
            return Err(EvalError::DepthLimit);
        }
        let clauses = self
            .table
            .fns
            .get(&(name.to_string(), args.len()))
            .ok_or_else(|| EvalError::MissingFunction(name.to_string(), args.len()))?;
        for clause in clauses {
            match clause {
                ImplFn::Native(f) => return f(args).map_err(|msg| EvalError::Native(name.to_string(), msg)),
                ImplFn::Interpreted(f) => {
                    let Some(mut env) = bind_params(&f.params, args) else { continue };
                    for (pat, rhs) in &f.binds {
                        let v = self.eval(rhs, &env, depth + 1)?;
                        let new = match_pattern(pat, &v, &env).ok_or(EvalError::MatchFailure(v))?;
                        env.extend(new);
                    }
                    return self.eval(&f.result, &env, depth + 1);
                }
            }
        }
        Err(EvalError::NoClause(name.to_string(), args.len()))
    }
}

fn bind_params(params: &[crate::lang::ast::Pattern], args: &[Value]) -> Option<Vars> {
    let mut env = Vars::new();
    for (p, a) in params.iter().zip(args) {
        let b = match_pattern(p, a, &env)?;
        env.extend(b);
    }
    Some(env)
}

fn binary(op: BinOp, a: Value, b: Value) -> Result<Value, EvalError> {
    use Value::*;
    let arith = |f: fn(i64, i64) -> Option<i64>, a: &Value, b: &Value| match (a, b) {
        (Int(x), Int(y)) => f(*x, *y).map(Int).ok_or(EvalError::Overflow),
        _ => Err(type_err(op.symbol(), a, b)),
    };
    match op {
        BinOp::Add => arith(i64::checked_add, &a, &b),
        BinOp::Sub => arith(i64::checked_sub, &a, &b),
        BinOp::Mul => arith(i64::checked_mul, &a, &b),
        BinOp::Div | BinOp::Rem => match (&a, &b) {
            (Int(_), Int(0)) => Err(EvalError::DivisionByZero),
            (Int(x), Int(y)) => {
                let r = if op == BinOp::Div { x.checked_div(*y) } else { x.checked_rem(*y) };
                r.map(Int).ok_or(EvalError::Overflow)
            }
            _ => Err(type_err(op.symbol(), &a, &b)),
        },
        BinOp::Eq => Ok(Bool(a == b)),
        BinOp::Ne => Ok(Bool(a != b)),
        BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
            let ord = match (&a, &b) {
                (Int(x), Int(y)) => x.cmp(y),
                (Str(x), Str(y)) => x.cmp(y),
                _ => return Err(type_err(op.symbol(), &a, &b)),
            };
            Ok(Bool(match op {
                BinOp::Lt => ord.is_lt(),
                BinOp::Le => ord.is_le(),
                BinOp::Gt => ord.is_gt(),
                _ => ord.is_ge(),
            }))
        }
        BinOp::Concat => match (a, b) {
            (Str(x), Str(y)) => Ok(Str(x + &y)),
            (a, b) => Err(type_err("<>", &a, &b)),
        },
        BinOp::And | BinOp::Or => unreachable!("short-circuit operators handled by the evaluator"),
    }
}

fn builtin(name: &str, args: &[Value]) -> Result<Value, EvalError> {
    match (name, args) {
        ("str", [Value::Str(s)]) => Ok(Value::Str(s.clone())),
        ("str", [v]) => Ok(Value::Str(v.to_string())),
        ("len", [Value::Str(s)]) => Ok(Value::Int(s.chars().count() as i64)),
        ("len", [Value::List(l) | Value::Tuple(l)]) => Ok(Value::Int(l.len() as i64)),
        ("len", [v]) => Err(EvalError::Type(format!("len not defined for {}", v.kind()))),
        ("hash64", [v]) => Ok(Value::Int(hash64(v))),
        ("crash_if", [v]) => {
            if v.truthy() {
                Err(EvalError::ExplicitCrash)
            } else {
                Ok(Value::Nil)
            }
        }
        ("rem", [a, b]) => binary(BinOp::Rem, a.clone(), b.clone()),
        _ => Err(EvalError::MissingFunction(name.to_string(), args.len())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parser::{parse_impls, parse_values};

    fn ev(src: &str) -> Result<Value, EvalError> {
        // Reuse the choreography parser by wrapping the expression.
        let prog =
            crate::lang::parser::parse(&format!("defchor [A] do def run() do A.({src}) end end")).expect("parse");
        let crate::lang::ast::Stmt::Local { expr, .. } = &prog.run().body[0] else { panic!() };
        eval_local(expr, &Vars::new(), &ImplTable::new())
    }

    /// Independent FNV-1a reference written directly from the published
    /// parameters (offset basis 14695981039346656037, prime 1099511628211).
    fn fnv_reference(data: &[u8]) -> u64 {
        let mut hash = 14695981039346656037u128;
        for &b in data {
            hash ^= b as u128;
            hash = (hash * 1099511628211u128) % (1u128 << 64);
        }
        hash as u64
    }

    #[test]
    fn division_by_zero_crashes() {
        assert_eq!(ev("1 / 0"), Err(EvalError::DivisionByZero));
        assert_eq!(ev("5 rem 0"), Err(EvalError::DivisionByZero));
    }

    #[test]
    fn arithmetic() {
        assert_eq!(ev("2 + 2"), Ok(Value::Int(4)));
        assert_eq!(ev("7 / 2"), Ok(Value::Int(3)));
        assert_eq!(ev("-7 rem 3"), Ok(Value::Int(-1)));
        assert_eq!(ev("rem(10, 4)"), Ok(Value::Int(2)));
    }

    #[test]
    fn type_errors_crash() {
        assert!(matches!(ev("1 + \"a\""), Err(EvalError::Type(_))));
        assert!(matches!(ev(":unit + 1"), Err(EvalError::Type(_))));
    }

    #[test]
    fn hash64_of_empty_string_is_offset_basis() {
        assert_eq!(ev("hash64(\"\")"), Ok(Value::Int(0xcbf29ce484222325u64 as i64)));
        assert_eq!(fnv_reference(b""), 0xcbf29ce484222325);
    }

    #[test]
    fn fnv_matches_reference() {
        for s in ["a", "foobar", "choreography", "\u{00e9}t\u{00e9}"] {
            assert_eq!(fnv1a64(s.as_bytes()), fnv_reference(s.as_bytes()), "{s}");
        }
        // Published test vector for "a".
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        let v = Value::Tuple(vec![Value::Int(1), Value::Nil]);
        assert_eq!(hash64(&v), fnv_reference(&encode_value(&v)) as i64);
    }

    #[test]
    fn builtins() {
        assert_eq!(ev("str(42) <> \"!\""), Ok(Value::str("42!")));
        assert_eq!(ev("len([1, 2, 3])"), Ok(Value::Int(3)));
        assert_eq!(ev("crash_if(1 == 2)"), Ok(Value::Nil));
        assert_eq!(ev("crash_if(1 == 1)"), Err(EvalError::ExplicitCrash));
    }

    #[test]
    fn short_circuit() {
        assert_eq!(ev("false and 1 / 0 == 1"), Ok(Value::Bool(false)));
        assert_eq!(ev("true or crash_if(true)"), Ok(Value::Bool(true)));
    }

    #[test]
    fn impl_functions_dispatch_by_pattern() {
        let mods = parse_impls(
            "t.chim",
            "defimpl A do
               def fact(0) do 1 end
               def fact(n) do n * fact(n - 1) end
               def pair({a, b}) do
                 s = a + b
                 {s, a * b}
               end
             end",
        )
        .unwrap();
        let reg = ImplRegistry::from_modules(mods);
        let t = reg.table(&Role::from("A"));
        let args = parse_values("{3, 4}").unwrap();
        let mut vars = Vars::new();
        vars.insert("p".into(), args[0].clone());
        let prog = crate::lang::parser::parse("defchor [A] do def run() do A.({fact(5), pair(p)}) end end").unwrap();
        let crate::lang::ast::Stmt::Local { expr, .. } = &prog.run().body[0] else { panic!() };
        assert_eq!(
            eval_local(expr, &vars, &t).unwrap(),
            Value::Tuple(vec![Value::Int(120), Value::Tuple(vec![Value::Int(7), Value::Int(12)])])
        );
    }

    #[test]
    fn native_impls() {
        let mut t = ImplTable::new();
        t.define("boom", 0, |_| Err("nope".into()));
        let prog = crate::lang::parser::parse("defchor [A] do def run() do A.boom() end end").unwrap();
        let crate::lang::ast::Stmt::Local { expr, .. } = &prog.run().body[0] else { panic!() };
        assert_eq!(eval_local(expr, &Vars::new(), &t), Err(EvalError::Native("boom".into(), "nope".into())));
    }
}
