//! Static checks on a parsed choreography.

use std::collections::{BTreeMap, BTreeSet};

use super::ast::*;
use super::pattern::pattern_vars;
use crate::project::local::{notified, project_local, LStmt};

/// A located variable read with no binding on the reading role.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScopeError {
    pub role: Role,
    pub var: String,
    pub span: Span,
    /// Roles on which the variable is bound at the point of the read.
    pub located_at: Vec<Role>,
    /// Enclosing function as `name/arity`.
    pub function: String,
}

/// A conditional whose branches differ for a role that is not notified.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KocError {
    pub role: Role,
    pub span: Span,
}

/// Calls that cannot be resolved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CallError {
    pub span: Span,
    pub message: String,
}

type Env = BTreeMap<Role, BTreeSet<String>>;

struct ScopeCx<'a> {
    function: String,
    errors: &'a mut Vec<ScopeError>,
}

impl ScopeCx<'_> {
    fn read(&mut self, env: &Env, role: &Role, var: &str, span: &Span) {
        if env.get(role).is_some_and(|s| s.contains(var)) {
            return;
        }
        let located_at = env.iter().filter(|(r, vs)| *r != role && vs.contains(var)).map(|(r, _)| r.clone()).collect();
        self.errors.push(ScopeError {
            role: role.clone(),
            var: var.to_string(),
            span: span.clone(),
            located_at,
            function: self.function.clone(),
        });
    }

    fn expr(&mut self, env: &Env, role: &Role, e: &Expr) {
        for (v, span) in e.var_occurrences() {
            self.read(env, role, v, span);
        }
    }

    fn pattern(&mut self, env: &mut Env, role: &Role, p: &Pattern, span: &Span) {
        let pv = pattern_vars(p);
        for v in &pv.used {
            self.read(env, role, v, span);
        }
        env.entry(role.clone()).or_default().extend(pv.bound);
    }

    fn call(&mut self, env: &Env, c: &ChorCall) {
        for a in &c.args {
            if let Arg::Located(r, e) = a {
                self.expr(env, r, e);
            }
        }
    }

    fn stmts(&mut self, env: &mut Env, stmts: &[Stmt]) {
        for s in stmts {
            self.stmt(env, s);
        }
    }

    fn stmt(&mut self, env: &mut Env, s: &Stmt) {
        match s {
            Stmt::Delivery { sender, expr, receiver, pattern, span, .. } => {
                self.expr(env, sender, expr);
                self.pattern(env, receiver, pattern, span);
            }
            Stmt::If { decider, cond, then_branch, else_branch, .. } => {
                self.expr(env, decider, cond);
                self.stmts(&mut env.clone(), then_branch);
                self.stmts(&mut env.clone(), else_branch);
            }
            Stmt::Checkpoint { body, rescue, .. } => {
                self.stmts(&mut env.clone(), body);
                self.stmts(&mut env.clone(), rescue);
            }
            Stmt::With { role, pattern, rhs, rest, span } => {
                match rhs {
                    WithRhs::Local(e) => self.expr(env, role, e),
                    WithRhs::Call(c) => self.call(env, c),
                }
                let mut inner = env.clone();
                self.pattern(&mut inner, role, pattern, span);
                self.stmts(&mut inner, rest);
            }
            Stmt::Local { role, expr, .. } => self.expr(env, role, expr),
            Stmt::Call(c) => self.call(env, c),
        }
    }
}

/// Every located variable read must follow a binding on the same role.
pub fn check_located_scope(prog: &ChorProgram) -> Vec<ScopeError> {
    let mut errors = Vec::new();
    for f in &prog.functions {
        let mut env = Env::new();
        let mut cx = ScopeCx { function: f.key(), errors: &mut errors };
        for p in &f.params {
            if let Param::Located(role, pat) = p {
                cx.pattern(&mut env, role, pat, &f.span);
            }
        }
        cx.stmts(&mut env, &f.body);
    }
    errors
}

/// Every conditional's branches must agree for each role that is neither the
/// decider nor notified.
pub fn check_knowledge_of_choice(prog: &ChorProgram) -> Vec<KocError> {
    let mut errors = Vec::new();
    for f in &prog.functions {
        koc_stmts(prog, &f.body, &mut errors);
    }
    errors
}

fn koc_stmts(prog: &ChorProgram, stmts: &[Stmt], errors: &mut Vec<KocError>) {
    for s in stmts {
        match s {
            Stmt::If { decider, notify, then_branch, else_branch, span, .. } => {
                let told = notified(&prog.roles, decider, notify);
                for r in &prog.roles {
                    if r == decider || told.contains(r) {
                        continue;
                    }
                    let a = lenient(prog, then_branch, r);
                    let b = lenient(prog, else_branch, r);
                    if a != b {
                        errors.push(KocError { role: r.clone(), span: span.clone() });
                    }
                }
                koc_stmts(prog, then_branch, errors);
                koc_stmts(prog, else_branch, errors);
            }
            Stmt::Checkpoint { body, rescue, .. } => {
                koc_stmts(prog, body, errors);
                koc_stmts(prog, rescue, errors);
            }
            Stmt::With { rest, .. } => koc_stmts(prog, rest, errors),
            _ => {}
        }
    }
}

fn lenient(prog: &ChorProgram, stmts: &[Stmt], role: &Role) -> Vec<LStmt> {
    project_local(&prog.roles, stmts, role, false).expect("lenient projection cannot fail")
}

/// Choreography calls must name a defined function with matching arity, and
/// argument roles must line up with every clause's parameters. Overloaded
/// clauses must stay distinguishable after projection to each role.
pub fn check_calls(prog: &ChorProgram) -> Vec<CallError> {
    let mut errors = Vec::new();
    for f in &prog.functions {
        let fparams: BTreeSet<&str> = f
            .params
            .iter()
            .filter_map(|p| match p {
                Param::Func(n) => Some(n.as_str()),
                Param::Located(..) => None,
            })
            .collect();
        calls_in(prog, &fparams, &f.body, &mut errors);
    }
    overloads(prog, &mut errors);
    errors
}

fn calls_in(prog: &ChorProgram, fparams: &BTreeSet<&str>, stmts: &[Stmt], errors: &mut Vec<CallError>) {
    let check = |c: &ChorCall, errors: &mut Vec<CallError>| {
        let mut err = |message: String| errors.push(CallError { span: c.span.clone(), message });
        for a in &c.args {
            match a {
                Arg::FuncVar(v) if !fparams.contains(v.as_str()) => err(format!("`{v}` is not a function parameter")),
                Arg::FuncRef(n, ar) if !prog.has_function(n, *ar as usize) => {
                    err(format!("undefined function @{n}/{ar}"))
                }
                _ => {}
            }
        }
        match &c.target {
            CallTarget::Indirect(v) => {
                if !fparams.contains(v.as_str()) {
                    err(format!("`{v}` is not a function parameter"));
                }
            }
            CallTarget::Direct(name) => {
                if !prog.has_function(name, c.arity()) {
                    err(format!("undefined function {name}/{}", c.arity()));
                }
                for clause in prog.clauses(name, c.arity()) {
                    for (i, (a, p)) in c.args.iter().zip(&clause.params).enumerate() {
                        let ok = match (a, p) {
                            (Arg::Located(ra, _), Param::Located(rp, _)) => ra == rp,
                            (Arg::FuncRef(..) | Arg::FuncVar(_), Param::Func(_)) => true,
                            _ => false,
                        };
                        if !ok {
                            err(format!("argument {} of {name}/{} does not match its parameter", i + 1, c.arity()));
                        }
                    }
                }
            }
        }
    };
    for s in stmts {
        match s {
            Stmt::Call(c) => check(c, errors),
            Stmt::With { rhs, rest, .. } => {
                if let WithRhs::Call(c) = rhs {
                    check(c, errors);
                }
                calls_in(prog, fparams, rest, errors);
            }
            Stmt::If { then_branch, else_branch, .. } => {
                calls_in(prog, fparams, then_branch, errors);
                calls_in(prog, fparams, else_branch, errors);
            }
            Stmt::Checkpoint { body, rescue, .. } => {
                calls_in(prog, fparams, body, errors);
                calls_in(prog, fparams, rescue, errors);
            }
            Stmt::Delivery { .. } | Stmt::Local { .. } => {}
        }
    }
}

/// Parameter patterns one role sees for a clause.
pub fn projected_params(params: &[Param], role: &Role) -> Vec<Pattern> {
    params
        .iter()
        .map(|p| match p {
            Param::Located(r, pat) if r == role => pat.clone(),
            Param::Located(..) => Pattern::Wildcard,
            Param::Func(n) => Pattern::Var(n.clone()),
        })
        .collect()
}

fn overloads(prog: &ChorProgram, errors: &mut Vec<CallError>) {
    let mut seen: BTreeSet<(String, usize)> = BTreeSet::new();
    for f in &prog.functions {
        if !seen.insert((f.name.clone(), f.arity())) {
            continue;
        }
        let clauses: Vec<_> = prog.clauses(&f.name, f.arity()).collect();
        for (i, a) in clauses.iter().enumerate() {
            for b in &clauses[i + 1..] {
                for role in &prog.roles {
                    if projected_params(&a.params, role) == projected_params(&b.params, role) {
                        errors.push(CallError {
                            span: b.span.clone(),
                            message: format!(
                                "clauses of {} are indistinguishable for {role} after projection",
                                f.key()
                            ),
                        });
                    }
                }
            }
        }
    }
}
