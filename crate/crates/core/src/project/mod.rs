//! Endpoint projection: one program of receive-split handler blocks per role.

pub mod listing;
pub mod live;
pub mod local;
mod lower;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::lang::ast::*;
pub use live::live_variables;
pub use local::{merge_projections, project_local, CallBind, LStmt, MergeError};

/// Identifies one handler block: `(function, arity, role, ordinal)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token {
    pub fname: Arc<str>,
    pub arity: u32,
    pub ordinal: u32,
    pub role: Arc<str>,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}/{}#{}", self.role, self.fname, self.arity, self.ordinal)
    }
}

/// What a block waits for (if anything) before its body runs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Entry {
    /// Function entry; arguments are matched against `params`.
    Start {
        params: Vec<Pattern>,
    },
    Recv {
        site: SiteId,
        from: Role,
        pattern: Pattern,
    },
    /// Waits for the decider's choice and stores it in [`choice_var`].
    Choice {
        site: SiteId,
        from: Role,
    },
    Barrier {
        site: CheckpointSiteId,
    },
    /// Resumption after a call; the callee's value is matched against `bind`.
    Landing {
        bind: Option<Pattern>,
    },
    Rescue {
        site: CheckpointSiteId,
    },
    /// Plain jump target.
    Join,
}

impl Entry {
    /// Whether the block blocks on a message before running.
    pub fn waits(&self) -> bool {
        matches!(self, Entry::Recv { .. } | Entry::Choice { .. } | Entry::Barrier { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Instr {
    Eval { bind: Option<Pattern>, expr: Expr },
    Send { site: SiteId, to: Role, expr: Expr },
    SendChoice { site: SiteId, dests: Vec<Role>, var: String },
    EnterCheckpoint { site: CheckpointSiteId, rescue: Token, exit: Token },
    ExitCheckpoint { site: CheckpointSiteId },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Terminator {
    Goto(Token),
    Branch { var: String, then_t: Token, else_t: Token },
    Call { fname: String, arity: usize, args: Vec<Expr>, ret: Token, tail: bool },
    CallIndirect { var: String, args: Vec<Expr>, ret: Token, tail: bool },
    Return(Expr),
    Finish(Expr),
}

impl Terminator {
    pub fn successors(&self) -> Vec<&Token> {
        match self {
            Terminator::Goto(t) => vec![t],
            Terminator::Branch { then_t, else_t, .. } => vec![then_t, else_t],
            Terminator::Call { ret, tail, .. } | Terminator::CallIndirect { ret, tail, .. } => {
                if *tail {
                    vec![]
                } else {
                    vec![ret]
                }
            }
            Terminator::Return(_) | Terminator::Finish(_) => vec![],
        }
    }

    /// Every token the terminator mentions, including tail-call landings.
    pub fn tokens(&self) -> Vec<&Token> {
        match self {
            Terminator::Call { ret, .. } | Terminator::CallIndirect { ret, .. } => vec![ret],
            _ => self.successors(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub token: Token,
    pub entry: Entry,
    pub body: Vec<Instr>,
    pub term: Terminator,
    pub live_in: BTreeSet<String>,
    pub live_out: BTreeSet<String>,
}

/// One clause of a choreography function as seen by a role.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clause {
    pub params: Vec<Pattern>,
    pub entry: Token,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SendSite {
    pub sender: Role,
    pub receivers: Vec<Role>,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FunctionSpec {
    pub name: String,
    pub arity: usize,
}

impl fmt::Display for FunctionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.name, self.arity)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EndpointProgram {
    pub role: Role,
    pub blocks: BTreeMap<Token, Block>,
    /// Clauses by `(name, arity)`, in source order.
    pub functions: BTreeMap<(String, usize), Vec<Clause>>,
    pub entry: Token,
    pub send_sites: BTreeMap<SiteId, SendSite>,
    pub required: BTreeSet<FunctionSpec>,
}

impl EndpointProgram {
    pub fn block(&self, t: &Token) -> &Block {
        &self.blocks[t]
    }

    /// Blocks in function order, then by ordinal.
    pub fn ordered_blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.values()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ProjectError {
    #[error("Branches differ for actor {}; `if` block needs to notify", .0.role)]
    Merge(Box<MergeError>),
    #[error("unknown role {0}")]
    UnknownRole(Role),
    #[error("internal projection error: {0}")]
    Internal(String),
}

/// Name of the variable holding the outcome of the conditional at `site`.
pub fn choice_var(site: SiteId) -> String {
    format!("%c{}", site.0)
}

/// Variable that carries a block's value across a barrier or call.
pub const RET_VAR: &str = "%ret";

/// Project `prog` for `role`.
pub fn project(prog: &ChorProgram, role: &Role) -> Result<EndpointProgram, ProjectError> {
    if !prog.has_role(role) {
        return Err(ProjectError::UnknownRole(role.clone()));
    }
    let mut ep = lower::lower_program(prog, role)?;
    live_variables(&mut ep.blocks);
    ep.required = required_functions(prog, role);
    ep.send_sites = send_sites(prog);
    Ok(ep)
}

/// Project every role.
pub fn project_all(prog: &ChorProgram) -> Result<BTreeMap<Role, EndpointProgram>, ProjectError> {
    prog.roles.iter().map(|r| Ok((r.clone(), project(prog, r)?))).collect()
}

/// Impl functions invoked by expressions located at `role`.
pub fn required_functions(prog: &ChorProgram, role: &Role) -> BTreeSet<FunctionSpec> {
    let mut out = BTreeSet::new();
    for f in &prog.functions {
        required_in(&f.body, role, &mut out);
    }
    out.into_iter().map(|(name, arity)| FunctionSpec { name, arity }).collect()
}

fn required_in(stmts: &[Stmt], role: &Role, out: &mut BTreeSet<(String, usize)>) {
    let call_args = |c: &ChorCall, out: &mut BTreeSet<(String, usize)>| {
        for a in &c.args {
            if let Arg::Located(r, e) = a {
                if r == role {
                    e.called_functions(out);
                }
            }
        }
    };
    for s in stmts {
        match s {
            Stmt::Delivery { sender, expr, .. } => {
                if sender == role {
                    expr.called_functions(out);
                }
            }
            Stmt::Local { role: r, expr, .. } => {
                if r == role {
                    expr.called_functions(out);
                }
            }
            Stmt::If { decider, cond, then_branch, else_branch, .. } => {
                if decider == role {
                    cond.called_functions(out);
                }
                required_in(then_branch, role, out);
                required_in(else_branch, role, out);
            }
            Stmt::Checkpoint { body, rescue, .. } => {
                required_in(body, role, out);
                required_in(rescue, role, out);
            }
            Stmt::With { role: r, rhs, rest, .. } => {
                match rhs {
                    WithRhs::Local(e) if r == role => e.called_functions(out),
                    WithRhs::Local(_) => {}
                    WithRhs::Call(c) => call_args(c, out),
                }
                required_in(rest, role, out);
            }
            Stmt::Call(c) => call_args(c, out),
        }
    }
}

fn send_sites(prog: &ChorProgram) -> BTreeMap<SiteId, SendSite> {
    fn walk(roles: &[Role], stmts: &[Stmt], out: &mut BTreeMap<SiteId, SendSite>) {
        for s in stmts {
            match s {
                Stmt::Delivery { sender, receiver, site, span, .. } => {
                    out.entry(*site).or_insert_with(|| SendSite {
                        sender: sender.clone(),
                        receivers: vec![receiver.clone()],
                        span: span.clone(),
                    });
                }
                Stmt::If { decider, notify, then_branch, else_branch, site, span, .. } => {
                    out.entry(*site).or_insert_with(|| SendSite {
                        sender: decider.clone(),
                        receivers: local::notified(roles, decider, notify),
                        span: span.clone(),
                    });
                    walk(roles, then_branch, out);
                    walk(roles, else_branch, out);
                }
                Stmt::Checkpoint { body, rescue, .. } => {
                    walk(roles, body, out);
                    walk(roles, rescue, out);
                }
                Stmt::With { rest, .. } => walk(roles, rest, out),
                Stmt::Local { .. } | Stmt::Call(_) => {}
            }
        }
    }
    let mut out = BTreeMap::new();
    for f in &prog.functions {
        walk(&prog.roles, &f.body, &mut out);
    }
    out
}
