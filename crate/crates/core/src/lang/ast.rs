//! Abstract syntax of choreographies and impl files.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::value::Value;

/// Source position of a statement or expression.
///
/// Spans never take part in structural comparison: two spans always compare
/// equal, so every derived `PartialEq` over the AST (and over projected code)
/// is equality "after span erasure".
#[derive(Clone, Debug, Default)]
pub struct Span {
    pub file: Arc<str>,
    pub line: u32,
    pub column: u32,
    pub length: u32,
}

impl PartialEq for Span {
    fn eq(&self, _other: &Self) -> bool {
        true
    }
}

impl Eq for Span {}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.file, self.line, self.column)
    }
}

/// Name of an actor role, CamelCase by convention.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Role(pub String);

impl Role {
    pub fn new(s: impl Into<String>) -> Role {
        Role(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Role {
    fn from(s: &str) -> Self {
        Role(s.to_string())
    }
}

/// Identifies a delivery or conditional in the source. Numbered in source
/// order; the two branches of an `if` are numbered from the same starting
/// point so identical branches project identically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SiteId(pub u32);

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Identifies a `checkpoint` block in the source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CheckpointSiteId(pub u32);

impl fmt::Display for CheckpointSiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    Concat,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "rem",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Concat => "<>",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    /// Scalar literal: nil, bool, int, string or atom.
    Lit(Value),
    Var(String, Span),
    Tuple(Vec<Expr>),
    List(Vec<Expr>),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    /// Call of an impl function or a builtin.
    Call(String, Vec<Expr>, Span),
    FuncRef(String, u8),
}

/// Functions every role gets for free; never part of a required interface.
pub const BUILTINS: &[(&str, usize)] = &[("str", 1), ("len", 1), ("hash64", 1), ("crash_if", 1), ("rem", 2)];

pub fn is_builtin(name: &str, arity: usize) -> bool {
    BUILTINS.iter().any(|&(n, a)| n == name && a == arity)
}

impl Expr {
    pub fn nil() -> Expr {
        Expr::Lit(Value::Nil)
    }

    /// Variables read by the expression.
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Lit(_) | Expr::FuncRef(..) => {}
            Expr::Var(v, _) => {
                out.insert(v.clone());
            }
            Expr::Tuple(items) | Expr::List(items) | Expr::Call(_, items, _) => {
                items.iter().for_each(|e| e.collect_vars(out))
            }
            Expr::Unary(_, e) => e.collect_vars(out),
            Expr::Binary(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Variable occurrences with their spans, in evaluation order.
    pub fn var_occurrences(&self) -> Vec<(&str, &Span)> {
        let mut out = Vec::new();
        self.collect_occurrences(&mut out);
        out
    }

    fn collect_occurrences<'a>(&'a self, out: &mut Vec<(&'a str, &'a Span)>) {
        match self {
            Expr::Lit(_) | Expr::FuncRef(..) => {}
            Expr::Var(v, s) => out.push((v, s)),
            Expr::Tuple(items) | Expr::List(items) | Expr::Call(_, items, _) => {
                items.iter().for_each(|e| e.collect_occurrences(out))
            }
            Expr::Unary(_, e) => e.collect_occurrences(out),
            Expr::Binary(_, a, b) => {
                a.collect_occurrences(out);
                b.collect_occurrences(out);
            }
        }
    }

    /// Non-builtin functions called by the expression, as (name, arity).
    pub fn called_functions(&self, out: &mut BTreeSet<(String, usize)>) {
        match self {
            Expr::Lit(_) | Expr::Var(..) | Expr::FuncRef(..) => {}
            Expr::Call(name, args, _) => {
                if !is_builtin(name, args.len()) {
                    out.insert((name.clone(), args.len()));
                }
                args.iter().for_each(|e| e.called_functions(out));
            }
            Expr::Tuple(items) | Expr::List(items) => items.iter().for_each(|e| e.called_functions(out)),
            Expr::Unary(_, e) => e.called_functions(out),
            Expr::Binary(_, a, b) => {
                a.called_functions(out);
                b.called_functions(out);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Pattern {
    Lit(Value),
    Var(String),
    /// `^v`: matches the current value of an in-scope variable.
    Pin(String),
    Wildcard,
    Tuple(Vec<Pattern>),
    List(Vec<Pattern>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Param {
    Located(Role, Pattern),
    /// A function-valued parameter; present on every role.
    Func(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Arg {
    Located(Role, Expr),
    FuncRef(String, u8),
    /// A function-valued parameter passed along.
    FuncVar(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CallTarget {
    /// Call of a choreography-level function by name.
    Direct(String),
    /// `f.(args)` where `f` is a function-valued parameter.
    Indirect(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChorCall {
    pub target: CallTarget,
    pub args: Vec<Arg>,
    pub span: Span,
}

impl ChorCall {
    pub fn arity(&self) -> usize {
        self.args.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WithRhs {
    Local(Expr),
    Call(ChorCall),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Stmt {
    Delivery {
        sender: Role,
        expr: Expr,
        receiver: Role,
        pattern: Pattern,
        site: SiteId,
        span: Span,
    },
    If {
        decider: Role,
        cond: Expr,
        /// `None` means every other role is notified.
        notify: Option<Vec<Role>>,
        then_branch: Vec<Stmt>,
        else_branch: Vec<Stmt>,
        site: SiteId,
        span: Span,
    },
    Checkpoint {
        body: Vec<Stmt>,
        rescue: Vec<Stmt>,
        site: CheckpointSiteId,
        span: Span,
    },
    With {
        role: Role,
        pattern: Pattern,
        rhs: WithRhs,
        rest: Vec<Stmt>,
        span: Span,
    },
    Local {
        role: Role,
        expr: Expr,
        span: Span,
    },
    Call(ChorCall),
}

impl Stmt {
    pub fn span(&self) -> &Span {
        match self {
            Stmt::Delivery { span, .. }
            | Stmt::If { span, .. }
            | Stmt::Checkpoint { span, .. }
            | Stmt::With { span, .. }
            | Stmt::Local { span, .. } => span,
            Stmt::Call(c) => &c.span,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChorFunction {
    pub name: String,
    pub params: Vec<Param>,
    pub body: Vec<Stmt>,
    pub span: Span,
}

impl ChorFunction {
    pub fn arity(&self) -> usize {
        self.params.len()
    }

    /// `name/arity`, the key used for overload resolution.
    pub fn key(&self) -> String {
        format!("{}/{}", self.name, self.params.len())
    }
}

#[derive(Clone, Debug)]
pub struct ChorProgram {
    pub file: Arc<str>,
    pub roles: Vec<Role>,
    pub functions: Vec<ChorFunction>,
}

impl ChorProgram {
    pub fn run(&self) -> &ChorFunction {
        self.functions.iter().find(|f| f.name == "run").expect("parser guarantees a run function")
    }

    /// Clauses for `name/arity` in source order.
    pub fn clauses<'a>(&'a self, name: &'a str, arity: usize) -> impl Iterator<Item = &'a ChorFunction> + 'a {
        self.functions.iter().filter(move |f| f.name == name && f.arity() == arity)
    }

    pub fn has_function(&self, name: &str, arity: usize) -> bool {
        self.clauses(name, arity).next().is_some()
    }

    pub fn has_role(&self, role: &Role) -> bool {
        self.roles.contains(role)
    }
}

/// One function of an impl file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImplFunction {
    pub name: String,
    pub params: Vec<Pattern>,
    /// `pattern = expr` bindings evaluated in order, then the result expression.
    pub binds: Vec<(Pattern, Expr)>,
    pub result: Expr,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImplModule {
    pub role: Role,
    pub functions: Vec<ImplFunction>,
}

fn join<T: fmt::Display>(f: &mut fmt::Formatter<'_>, items: &[T]) -> fmt::Result {
    for (i, x) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{x}")?;
    }
    Ok(())
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(v) => write!(f, "{v}"),
            Expr::Var(v, _) => f.write_str(v),
            Expr::Tuple(items) => {
                f.write_str("{")?;
                join(f, items)?;
                f.write_str("}")
            }
            Expr::List(items) => {
                f.write_str("[")?;
                join(f, items)?;
                f.write_str("]")
            }
            Expr::Unary(UnOp::Neg, e) => write!(f, "-{e}"),
            Expr::Unary(UnOp::Not, e) => write!(f, "not {e}"),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(name, args, _) => {
                write!(f, "{name}(")?;
                join(f, args)?;
                f.write_str(")")
            }
            Expr::FuncRef(n, a) => write!(f, "@{n}/{a}"),
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::Lit(v) => write!(f, "{v}"),
            Pattern::Var(v) => f.write_str(v),
            Pattern::Pin(v) => write!(f, "^{v}"),
            Pattern::Wildcard => f.write_str("_"),
            Pattern::Tuple(items) => {
                f.write_str("{")?;
                join(f, items)?;
                f.write_str("}")
            }
            Pattern::List(items) => {
                f.write_str("[")?;
                join(f, items)?;
                f.write_str("]")
            }
        }
    }
}
