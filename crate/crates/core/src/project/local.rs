//! One role's view of a statement list, before it is split into blocks.
//!
//! Merging the two branches of a conditional for a role that is not told the
//! outcome is plain structural equality on this representation.

use crate::lang::ast::*;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CallBind {
    /// The call's result is the value of the statement.
    Value,
    /// Called for its effects only (another role binds the result).
    Discard,
    Bind(Pattern),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LStmt {
    /// Local evaluation. Without a pattern the result is the statement's value.
    Eval {
        bind: Option<Pattern>,
        expr: Expr,
    },
    /// Placeholder making a statement list end in `nil` for this role.
    Nop,
    Send {
        site: SiteId,
        to: Role,
        expr: Expr,
    },
    Recv {
        site: SiteId,
        from: Role,
        pattern: Pattern,
    },
    Decide {
        site: SiteId,
        cond: Expr,
        notify: Vec<Role>,
        then_b: Vec<LStmt>,
        else_b: Vec<LStmt>,
    },
    Follow {
        site: SiteId,
        from: Role,
        then_b: Vec<LStmt>,
        else_b: Vec<LStmt>,
    },
    /// Branches that failed to merge; only produced in lenient mode.
    Conflict {
        site: SiteId,
        then_b: Vec<LStmt>,
        else_b: Vec<LStmt>,
    },
    Checkpoint {
        site: CheckpointSiteId,
        body: Vec<LStmt>,
        rescue: Vec<LStmt>,
    },
    Call {
        target: CallTarget,
        args: Vec<Expr>,
        bind: CallBind,
    },
}

impl LStmt {
    /// Whether the statement can produce a non-nil value.
    pub fn yields_value(&self) -> bool {
        match self {
            LStmt::Eval { bind, .. } => bind.is_none(),
            LStmt::Nop | LStmt::Send { .. } | LStmt::Recv { .. } => false,
            LStmt::Decide { .. } | LStmt::Follow { .. } | LStmt::Conflict { .. } | LStmt::Checkpoint { .. } => true,
            LStmt::Call { bind, .. } => *bind == CallBind::Value,
        }
    }
}

/// Branches of a conditional that differ for a role that is not notified.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MergeError {
    pub role: Role,
    pub site: SiteId,
    pub span: Span,
    /// First differing pair; `None` where one branch is shorter.
    pub left: Option<Box<LStmt>>,
    pub right: Option<Box<LStmt>>,
}

/// Merge one role's projections of the two branches of a conditional.
#[allow(clippy::type_complexity)]
pub fn merge_projections(a: &[LStmt], b: &[LStmt]) -> Result<Vec<LStmt>, (Option<Box<LStmt>>, Option<Box<LStmt>>)> {
    if a == b {
        return Ok(a.to_vec());
    }
    let i = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    Err((a.get(i).cloned().map(Box::new), b.get(i).cloned().map(Box::new)))
}

/// Roles notified by an `if`; `None` means every role except the decider.
pub fn notified(roles: &[Role], decider: &Role, notify: &Option<Vec<Role>>) -> Vec<Role> {
    match notify {
        Some(list) => roles.iter().filter(|r| list.contains(r)).cloned().collect(),
        None => roles.iter().filter(|r| *r != decider).cloned().collect(),
    }
}

pub fn arg_expr(arg: &Arg, role: &Role) -> Expr {
    match arg {
        Arg::Located(r, e) if r == role => e.clone(),
        Arg::Located(..) => Expr::Lit(crate::value::Value::unit()),
        Arg::FuncRef(n, a) => Expr::FuncRef(n.clone(), *a),
        Arg::FuncVar(v) => Expr::Var(v.clone(), Span::default()),
    }
}

/// Project `stmts` for `role`. In strict mode the first merge failure is an
/// error; otherwise it becomes a [`LStmt::Conflict`].
pub fn project_local(roles: &[Role], stmts: &[Stmt], role: &Role, strict: bool) -> Result<Vec<LStmt>, MergeError> {
    let mut out = Vec::new();
    let mut last_nop = false;
    for s in stmts {
        let before = out.len();
        project_stmt(roles, s, role, strict, &mut out)?;
        if out.len() == before {
            out.push(LStmt::Nop);
        }
        last_nop = matches!(out.last(), Some(LStmt::Nop));
    }
    out.retain(|s| *s != LStmt::Nop);
    if last_nop && out.last().is_some_and(LStmt::yields_value) {
        out.push(LStmt::Nop);
    }
    Ok(out)
}

fn project_stmt(roles: &[Role], s: &Stmt, role: &Role, strict: bool, out: &mut Vec<LStmt>) -> Result<(), MergeError> {
    match s {
        Stmt::Delivery { sender, expr, receiver, pattern, site, .. } => {
            if sender == role {
                out.push(LStmt::Send { site: *site, to: receiver.clone(), expr: expr.clone() });
            } else if receiver == role {
                out.push(LStmt::Recv { site: *site, from: sender.clone(), pattern: pattern.clone() });
            }
        }
        Stmt::Local { role: r, expr, .. } => {
            if r == role {
                out.push(LStmt::Eval { bind: None, expr: expr.clone() });
            }
        }
        Stmt::If { decider, cond, notify, then_branch, else_branch, site, span } => {
            let then_b = project_local(roles, then_branch, role, strict)?;
            let else_b = project_local(roles, else_branch, role, strict)?;
            let notify = notified(roles, decider, notify);
            if decider == role {
                out.push(LStmt::Decide { site: *site, cond: cond.clone(), notify, then_b, else_b });
            } else if notify.contains(role) {
                out.push(LStmt::Follow { site: *site, from: decider.clone(), then_b, else_b });
            } else {
                match merge_projections(&then_b, &else_b) {
                    Ok(merged) => out.extend(merged),
                    Err((left, right)) if strict => {
                        return Err(MergeError { role: role.clone(), site: *site, span: span.clone(), left, right })
                    }
                    Err(_) => out.push(LStmt::Conflict { site: *site, then_b, else_b }),
                }
            }
        }
        Stmt::Checkpoint { body, rescue, site, .. } => {
            out.push(LStmt::Checkpoint {
                site: *site,
                body: project_local(roles, body, role, strict)?,
                rescue: project_local(roles, rescue, role, strict)?,
            });
        }
        Stmt::With { role: r, pattern, rhs, rest, .. } => {
            match rhs {
                WithRhs::Local(e) => {
                    if r == role {
                        out.push(LStmt::Eval { bind: Some(pattern.clone()), expr: e.clone() });
                    }
                }
                WithRhs::Call(c) => {
                    let bind = if r == role { CallBind::Bind(pattern.clone()) } else { CallBind::Discard };
                    out.push(call_stmt(c, role, bind));
                }
            }
            let rest = project_local(roles, rest, role, strict)?;
            if rest.is_empty() {
                // The value of a `with` is the value of its body.
                out.push(LStmt::Nop);
            }
            out.extend(rest);
        }
        Stmt::Call(c) => out.push(call_stmt(c, role, CallBind::Value)),
    }
    Ok(())
}

fn call_stmt(c: &ChorCall, role: &Role, bind: CallBind) -> LStmt {
    LStmt::Call { target: c.target.clone(), args: c.args.iter().map(|a| arg_expr(a, role)).collect(), bind }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse;

    fn body(src: &str, role: &str) -> Result<Vec<LStmt>, MergeError> {
        let p = parse(src).unwrap();
        project_local(&p.roles, &p.run().body, &Role::from(role), true)
    }

    #[test]
    fn unrelated_statements_vanish() {
        let src = "defchor [A, B, C] do def run() do A.(1) ~> B.x; B.(x) end end";
        assert_eq!(body(src, "C").unwrap(), vec![]);
    }

    #[test]
    fn trailing_foreign_local_yields_nil() {
        let src = "defchor [A, B] do def run() do B.(5); A.(1) end end";
        let b = body(src, "B").unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b[1], LStmt::Nop);
    }

    #[test]
    fn both_branches_empty_merge() {
        assert_eq!(merge_projections(&[], &[]), Ok(vec![]));
    }

    #[test]
    fn branches_differing_only_in_spans_merge() {
        let src = "defchor [A, B, C] do def run() do\n\
                   if A.(true), notify: [B] do\n  C.go()\n  A.(1) ~> B.x\nelse\n\n\n  C.go()\n  A.(2) ~> B.x\nend\nend end";
        assert!(body(src, "C").is_ok());
    }

    #[test]
    fn differing_branches_report_first_pair() {
        let src = "defchor [A, B, C] do def run() do\n\
                   if A.(true), notify: [B] do C.foiled() else C.success() end end end";
        let err = body(src, "C").unwrap_err();
        assert_eq!(err.role, Role::from("C"));
        assert!(matches!(err.left.as_deref(), Some(LStmt::Eval { .. })));
        assert_ne!(err.left, err.right);
    }
}
