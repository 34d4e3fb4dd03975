//! Centralized reference interpreter.
//!
//! Runs a choreography sequentially with one flat variable environment per
//! role. Distributed runs are compared against its results.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use super::ast::*;
use super::check::projected_params;
use super::pattern::match_pattern;
use crate::eval::{eval_local, EvalError, ImplRegistry, ImplTable};
use crate::project::required_functions;
use crate::value::{Value, Vars};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GlobalEvent {
    Send { site: SiteId, from: Role, to: Role, value: Value },
    Receive { site: SiteId, from: Role, to: Role },
    Choice { site: SiteId, decider: Role, branch: bool },
    CheckpointEnter { site: CheckpointSiteId },
    Crash { role: Role, reason: String },
    RescueEnter { site: CheckpointSiteId },
    Barrier { site: CheckpointSiteId },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalResult {
    /// Final value per role, `nil` when the role's last statement has none.
    pub values: BTreeMap<Role, Value>,
    pub trace: Vec<GlobalEvent>,
    pub rescue_count: BTreeMap<CheckpointSiteId, u32>,
}

impl GlobalResult {
    pub fn rescues(&self) -> u32 {
        self.rescue_count.values().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum GlobalError {
    #[error("{role} crashed outside any checkpoint at {span}: {reason}")]
    CrashOutsideCheckpoint { role: Role, span: Span, reason: String },
    #[error("{role} crashed inside the rescue of {site} at {span}: {reason}")]
    CrashInRescue { role: Role, site: CheckpointSiteId, span: Span, reason: String },
    #[error("pattern match failed at {role} ({span})")]
    PatternMatchFailure { role: Role, span: Span },
    #[error("{role} does not provide required function {name}/{arity}")]
    MissingImplFunction { role: Role, name: String, arity: usize },
    #[error("roles selected different clauses of {function} at {span}")]
    DispatchDisagreement { function: String, span: Span },
    #[error("run expects {expected} arguments, got {got}")]
    ArgumentCount { expected: usize, got: usize },
    #[error("step limit of {0} exceeded")]
    StepLimit(u64),
}

/// Upper bound on executed statements, so divergent programs terminate.
pub const STEP_LIMIT: u64 = 50_000_000;

/// Evaluate `prog` centrally. `args` are the arguments of `run`.
pub fn eval_global(prog: &ChorProgram, args: &[Value], impls: &ImplRegistry) -> Result<GlobalResult, GlobalError> {
    let prog = prog.clone();
    let args = args.to_vec();
    let impls = impls.clone();
    // Deep recursion in the choreography is deep recursion here.
    std::thread::Builder::new()
        .stack_size(512 << 20)
        .spawn(move || run_global(&prog, &args, &impls))
        .expect("spawn interpreter thread")
        .join()
        .expect("interpreter thread panicked")
}

fn run_global(prog: &ChorProgram, args: &[Value], impls: &ImplRegistry) -> Result<GlobalResult, GlobalError> {
    for role in &prog.roles {
        let table = impls.table(role);
        for spec in required_functions(prog, role) {
            if !table.provides(&spec.name, spec.arity) {
                return Err(GlobalError::MissingImplFunction {
                    role: role.clone(),
                    name: spec.name,
                    arity: spec.arity,
                });
            }
        }
    }
    let run = prog.run();
    if run.arity() != args.len() {
        return Err(GlobalError::ArgumentCount { expected: run.arity(), got: args.len() });
    }
    let mut it = Interp {
        prog,
        tables: prog.roles.iter().map(|r| (r.clone(), impls.table(r))).collect(),
        trace: Vec::new(),
        rescue_count: BTreeMap::new(),
        steps: 0,
    };
    let mut envs = Envs::new();
    for role in &prog.roles {
        let vals: Vec<Value> = run
            .params
            .iter()
            .zip(args)
            .map(|(p, a)| match p {
                Param::Located(r, _) if r != role => Value::unit(),
                _ => a.clone(),
            })
            .collect();
        let pats = projected_params(&run.params, role);
        match bind_all(&pats, &vals) {
            Some(env) => {
                envs.insert(role.clone(), env);
            }
            None => return Err(GlobalError::PatternMatchFailure { role: role.clone(), span: run.span.clone() }),
        }
    }
    match it.list(&run.body, &mut envs) {
        Ok(vals) => Ok(GlobalResult {
            values: prog.roles.iter().map(|r| (r.clone(), vals.get(r).cloned().unwrap_or(Value::Nil))).collect(),
            trace: it.trace,
            rescue_count: it.rescue_count,
        }),
        Err(Unwind::Fatal(e)) => Err(e),
        Err(Unwind::Crash { role, span, reason }) => Err(match reason {
            EvalError::MatchFailure(_) => GlobalError::PatternMatchFailure { role, span },
            r => GlobalError::CrashOutsideCheckpoint { role, span, reason: r.to_string() },
        }),
    }
}

type Envs = BTreeMap<Role, Vars>;
/// Per-role statement values; absent roles have `nil`.
type Vals = BTreeMap<Role, Value>;

enum Unwind {
    Crash { role: Role, span: Span, reason: EvalError },
    Fatal(GlobalError),
}

fn bind_all(pats: &[Pattern], vals: &[Value]) -> Option<Vars> {
    let mut env = Vars::new();
    for (p, v) in pats.iter().zip(vals) {
        env.extend(match_pattern(p, v, &env)?);
    }
    Some(env)
}

struct Interp<'a> {
    prog: &'a ChorProgram,
    tables: BTreeMap<Role, Arc<ImplTable>>,
    trace: Vec<GlobalEvent>,
    rescue_count: BTreeMap<CheckpointSiteId, u32>,
    steps: u64,
}

impl Interp<'_> {
    fn crash(&mut self, role: &Role, span: &Span, reason: EvalError) -> Unwind {
        self.trace.push(GlobalEvent::Crash { role: role.clone(), reason: reason.to_string() });
        Unwind::Crash { role: role.clone(), span: span.clone(), reason }
    }

    fn eval(&mut self, envs: &Envs, role: &Role, e: &Expr, span: &Span) -> Result<Value, Unwind> {
        let empty = Vars::new();
        let vars = envs.get(role).unwrap_or(&empty);
        eval_local(e, vars, &self.tables[role]).map_err(|err| self.crash(role, span, err))
    }

    fn bind(&mut self, envs: &mut Envs, role: &Role, p: &Pattern, v: Value, span: &Span) -> Result<(), Unwind> {
        let env = envs.entry(role.clone()).or_default();
        match match_pattern(p, &v, env) {
            Some(b) => {
                env.extend(b);
                Ok(())
            }
            None => Err(self.crash(role, span, EvalError::MatchFailure(v))),
        }
    }

    fn list(&mut self, stmts: &[Stmt], envs: &mut Envs) -> Result<Vals, Unwind> {
        let mut vals = Vals::new();
        for s in stmts {
            vals = self.stmt(s, envs)?;
        }
        Ok(vals)
    }

    fn stmt(&mut self, s: &Stmt, envs: &mut Envs) -> Result<Vals, Unwind> {
        self.steps += 1;
        if self.steps > STEP_LIMIT {
            return Err(Unwind::Fatal(GlobalError::StepLimit(STEP_LIMIT)));
        }
        match s {
            Stmt::Delivery { sender, expr, receiver, pattern, site, span } => {
                let v = self.eval(envs, sender, expr, span)?;
                self.trace.push(GlobalEvent::Send {
                    site: *site,
                    from: sender.clone(),
                    to: receiver.clone(),
                    value: v.clone(),
                });
                self.bind(envs, receiver, pattern, v, span)?;
                self.trace.push(GlobalEvent::Receive { site: *site, from: sender.clone(), to: receiver.clone() });
                Ok(Vals::new())
            }
            Stmt::Local { role, expr, span } => {
                let v = self.eval(envs, role, expr, span)?;
                Ok(Vals::from([(role.clone(), v)]))
            }
            Stmt::If { decider, cond, then_branch, else_branch, site, span, .. } => {
                let branch = self.eval(envs, decider, cond, span)?.truthy();
                self.trace.push(GlobalEvent::Choice { site: *site, decider: decider.clone(), branch });
                self.list(if branch { then_branch } else { else_branch }, envs)
            }
            Stmt::Checkpoint { body, rescue, site, span } => {
                let snapshot = envs.clone();
                self.trace.push(GlobalEvent::CheckpointEnter { site: *site });
                let vals = match self.list(body, envs) {
                    Ok(v) => v,
                    Err(Unwind::Crash { .. }) => {
                        *envs = snapshot;
                        *self.rescue_count.entry(*site).or_default() += 1;
                        self.trace.push(GlobalEvent::RescueEnter { site: *site });
                        match self.list(rescue, envs) {
                            Ok(v) => v,
                            Err(Unwind::Crash { role, reason, .. }) => {
                                return Err(Unwind::Fatal(GlobalError::CrashInRescue {
                                    role,
                                    site: *site,
                                    span: span.clone(),
                                    reason: reason.to_string(),
                                }))
                            }
                            Err(fatal) => return Err(fatal),
                        }
                    }
                    Err(fatal) => return Err(fatal),
                };
                self.trace.push(GlobalEvent::Barrier { site: *site });
                Ok(vals)
            }
            Stmt::With { role, pattern, rhs, rest, span } => {
                let v = match rhs {
                    WithRhs::Local(e) => self.eval(envs, role, e, span)?,
                    WithRhs::Call(c) => self.call(c, envs)?.remove(role).unwrap_or(Value::Nil),
                };
                self.bind(envs, role, pattern, v, span)?;
                self.list(rest, envs)
            }
            Stmt::Call(c) => self.call(c, envs),
        }
    }

    fn call(&mut self, c: &ChorCall, envs: &mut Envs) -> Result<Vals, Unwind> {
        let roles = &self.prog.roles;
        let (name, arity) = match &c.target {
            CallTarget::Direct(n) => (n.clone(), c.arity()),
            CallTarget::Indirect(v) => {
                let first = &roles[0];
                match envs.get(first).and_then(|e| e.get(v)) {
                    Some(Value::FuncRef { name, arity }) if *arity as usize == c.arity() => (name.clone(), c.arity()),
                    Some(other) => {
                        let reason = EvalError::Type(format!("cannot call {other} with {} arguments", c.arity()));
                        return Err(self.crash(first, &c.span, reason));
                    }
                    None => return Err(self.crash(first, &c.span, EvalError::Unbound(v.clone()))),
                }
            }
        };
        let clauses: Vec<&ChorFunction> = self.prog.clauses(&name, arity).collect();
        if clauses.is_empty() {
            return Err(self.crash(&roles[0], &c.span, EvalError::MissingFunction(name, arity)));
        }
        let mut chosen: Option<usize> = None;
        let mut new_envs = Envs::new();
        for role in roles {
            let mut vals = Vec::with_capacity(c.args.len());
            for a in &c.args {
                vals.push(match a {
                    Arg::Located(r, e) if r == role => self.eval(envs, role, e, &c.span)?,
                    Arg::Located(..) => Value::unit(),
                    Arg::FuncRef(n, ar) => Value::FuncRef { name: n.clone(), arity: *ar },
                    Arg::FuncVar(v) => match envs.get(role).and_then(|e| e.get(v)) {
                        Some(x) => x.clone(),
                        None => return Err(self.crash(role, &c.span, EvalError::Unbound(v.clone()))),
                    },
                });
            }
            let found = clauses
                .iter()
                .enumerate()
                .find_map(|(i, f)| bind_all(&projected_params(&f.params, role), &vals).map(|env| (i, env)));
            let Some((i, env)) = found else {
                return Err(self.crash(role, &c.span, EvalError::NoClause(name.clone(), arity)));
            };
            if chosen.is_some_and(|k| k != i) {
                return Err(Unwind::Fatal(GlobalError::DispatchDisagreement {
                    function: format!("{name}/{arity}"),
                    span: c.span.clone(),
                }));
            }
            chosen = Some(i);
            new_envs.insert(role.clone(), env);
        }
        let f = clauses[chosen.expect("at least one role")];
        self.list(&f.body, &mut new_envs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{parse, parse_impls};

    const MINIMAL: &str = "defchor [Alice, Bob] do\n def run() do\n\
        checkpoint do\n Alice.f(BODY) ~> Bob.y\n rescue\n Alice.f(1) ~> Bob.y\n end\n\
        Alice.(2 + 2) ~> Bob.sum\n Bob.(sum + sum) ~> Alice.result\n Alice.result\n end\nend";

    fn impls(src: &str) -> ImplRegistry {
        ImplRegistry::from_modules(parse_impls("t.chim", src).unwrap())
    }

    fn run(src: &str, args: &[Value], im: &str) -> Result<GlobalResult, GlobalError> {
        eval_global(&parse(src).unwrap(), args, &impls(im))
    }

    #[test]
    fn minimal_without_crash() {
        let src = MINIMAL.replace("BODY", "1");
        let r = run(&src, &[], "defimpl Alice do def f(x) do x end end").unwrap();
        assert_eq!(r.values[&Role::from("Alice")], Value::Int(8));
        assert_eq!(r.values[&Role::from("Bob")], Value::Nil);
        assert_eq!(r.rescues(), 0);
    }

    #[test]
    fn minimal_with_division_crash() {
        let src = MINIMAL.replace("BODY", "1 / 0");
        let r = run(&src, &[], "defimpl Alice do def f(x) do x end end").unwrap();
        assert_eq!(r.values[&Role::from("Alice")], Value::Int(8));
        assert_eq!(r.rescues(), 1);
        let y = r.trace.iter().find_map(|e| match e {
            GlobalEvent::Send { site, value, .. } if site.0 == 1 => Some(value.clone()),
            _ => None,
        });
        assert_eq!(y, Some(Value::Int(1)));
    }

    #[test]
    fn crash_outside_checkpoint() {
        let src = "defchor [A] do def run() do A.(1 / 0) end end";
        assert!(matches!(run(src, &[], ""), Err(GlobalError::CrashOutsideCheckpoint { .. })));
    }

    #[test]
    fn rescue_restores_entry_env() {
        let src = "defchor [A, B] do def run() do\n A.(1) ~> B.x\n checkpoint do\n\
                   A.(2) ~> B.x\n A.crash_if(true)\n rescue\n B.(x) ~> A.seen\n end\n A.(seen) end end";
        let r = run(src, &[], "").unwrap();
        assert_eq!(r.values[&Role::from("A")], Value::Int(1));
    }

    #[test]
    fn missing_impl_detected_up_front() {
        let src = "defchor [A] do def run() do A.get() end end";
        assert!(matches!(run(src, &[], ""), Err(GlobalError::MissingImplFunction { .. })));
    }

    #[test]
    fn recursion_with_overloads() {
        let src = "defchor [A, B] do\n def run(A.n) do count(A.n, B.(0)) end\n\
                   def count(A.0, B.acc) do B.(acc) end\n\
                   def count(A.n, B.acc) do\n if A.(n > 0) do A.(n - 1) ~> B.m\n\
                   count(A.(n - 1), B.(acc + 1))\n else\n B.(acc)\n end\n end\nend";
        let prog = parse(src).unwrap();
        // count/2 for B sees `acc` in both clauses; the check rejects the
        // overload, and dispatch would disagree at the base case.
        let r = eval_global(&prog, &[Value::Int(3)], &ImplRegistry::new());
        assert!(matches!(r, Err(GlobalError::DispatchDisagreement { .. })));
    }
}
