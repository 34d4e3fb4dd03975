//! Splitting a role's local statements into handler blocks.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::local::{project_local, CallBind, LStmt};
use super::*;
use crate::lang::check::projected_params;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Return,
    Finish,
}

/// What to do with the value of a statement list.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    /// Discard it and keep appending to the current block.
    Continue,
    /// Store it in [`RET_VAR`] and keep appending.
    Store,
    /// End the function with it.
    Terminate(Kind),
}

struct Open {
    token: Token,
    entry: Entry,
    body: Vec<Instr>,
}

struct Lowerer<'a> {
    role: Arc<str>,
    fname: Arc<str>,
    arity: u32,
    ordinal: &'a mut u32,
    blocks: &'a mut BTreeMap<Token, Block>,
    cur: Option<Open>,
}

fn ret_var() -> Expr {
    Expr::Var(RET_VAR.into(), Span::default())
}

fn ret_pat() -> Pattern {
    Pattern::Var(RET_VAR.into())
}

fn finish(kind: Kind, e: Expr) -> Terminator {
    match kind {
        Kind::Return => Terminator::Return(e),
        Kind::Finish => Terminator::Finish(e),
    }
}

impl Lowerer<'_> {
    fn token(&mut self) -> Token {
        let t = Token { fname: self.fname.clone(), arity: self.arity, ordinal: *self.ordinal, role: self.role.clone() };
        *self.ordinal += 1;
        t
    }

    fn open(&mut self, token: Token, entry: Entry) {
        debug_assert!(self.cur.is_none(), "block opened while another is open");
        self.cur = Some(Open { token, entry, body: Vec::new() });
    }

    fn push(&mut self, i: Instr) {
        self.cur.as_mut().expect("no open block").body.push(i);
    }

    fn close(&mut self, term: Terminator) {
        let Open { token, entry, body } = self.cur.take().expect("no open block");
        self.blocks.insert(
            token.clone(),
            Block { token, entry, body, term, live_in: Default::default(), live_out: Default::default() },
        );
    }

    fn nil(&mut self, mode: Mode) {
        match mode {
            Mode::Continue => {}
            Mode::Store => self.push(Instr::Eval { bind: Some(ret_pat()), expr: Expr::nil() }),
            Mode::Terminate(k) => self.close(finish(k, Expr::nil())),
        }
    }

    fn seq(&mut self, stmts: &[LStmt], mode: Mode) {
        if stmts.is_empty() {
            self.nil(mode);
            return;
        }
        let last = stmts.len() - 1;
        for (i, s) in stmts.iter().enumerate() {
            self.stmt(s, if i == last { mode } else { Mode::Continue });
        }
    }

    fn branches(&mut self, var: String, then_b: &[LStmt], else_b: &[LStmt], mode: Mode) {
        let then_t = self.token();
        let else_t = self.token();
        let join = match mode {
            Mode::Terminate(_) => None,
            _ => Some(self.token()),
        };
        self.close(Terminator::Branch { var, then_t: then_t.clone(), else_t: else_t.clone() });
        for (t, b) in [(then_t, then_b), (else_t, else_b)] {
            self.open(t, Entry::Join);
            self.seq(b, mode);
            if let Some(j) = &join {
                self.close(Terminator::Goto(j.clone()));
            }
        }
        if let Some(j) = join {
            self.open(j, Entry::Join);
        }
    }

    fn stmt(&mut self, s: &LStmt, mode: Mode) {
        match s {
            LStmt::Eval { bind: None, expr } => match mode {
                Mode::Continue => self.push(Instr::Eval { bind: None, expr: expr.clone() }),
                Mode::Store => self.push(Instr::Eval { bind: Some(ret_pat()), expr: expr.clone() }),
                Mode::Terminate(k) => self.close(finish(k, expr.clone())),
            },
            LStmt::Eval { bind, expr } => {
                self.push(Instr::Eval { bind: bind.clone(), expr: expr.clone() });
                self.nil(mode);
            }
            LStmt::Nop => self.nil(mode),
            LStmt::Send { site, to, expr } => {
                self.push(Instr::Send { site: *site, to: to.clone(), expr: expr.clone() });
                self.nil(mode);
            }
            LStmt::Recv { site, from, pattern } => {
                let t = self.token();
                self.close(Terminator::Goto(t.clone()));
                self.open(t, Entry::Recv { site: *site, from: from.clone(), pattern: pattern.clone() });
                self.nil(mode);
            }
            LStmt::Decide { site, cond, notify, then_b, else_b } => {
                let var = choice_var(*site);
                self.push(Instr::Eval { bind: Some(Pattern::Var(var.clone())), expr: cond.clone() });
                if !notify.is_empty() {
                    self.push(Instr::SendChoice { site: *site, dests: notify.clone(), var: var.clone() });
                }
                self.branches(var, then_b, else_b, mode);
            }
            LStmt::Follow { site, from, then_b, else_b } => {
                let t = self.token();
                self.close(Terminator::Goto(t.clone()));
                self.open(t, Entry::Choice { site: *site, from: from.clone() });
                self.branches(choice_var(*site), then_b, else_b, mode);
            }
            LStmt::Conflict { .. } => unreachable!("strict projection never yields conflicts"),
            LStmt::Checkpoint { site, body, rescue } => {
                let inner = if mode == Mode::Continue { Mode::Continue } else { Mode::Store };
                let rescue_t = self.token();
                let exit_t = self.token();
                self.push(Instr::EnterCheckpoint { site: *site, rescue: rescue_t.clone(), exit: exit_t.clone() });
                self.seq(body, inner);
                self.push(Instr::ExitCheckpoint { site: *site });
                self.close(Terminator::Goto(exit_t.clone()));
                self.open(rescue_t, Entry::Rescue { site: *site });
                self.seq(rescue, inner);
                self.push(Instr::ExitCheckpoint { site: *site });
                self.close(Terminator::Goto(exit_t.clone()));
                self.open(exit_t, Entry::Barrier { site: *site });
                if let Mode::Terminate(k) = mode {
                    self.close(finish(k, ret_var()));
                }
            }
            LStmt::Call { target, args, bind } => {
                let ret = self.token();
                let (landing, tail) = match (bind, mode) {
                    (CallBind::Value, Mode::Terminate(_)) => (Some(ret_pat()), true),
                    (CallBind::Value, Mode::Store) => (Some(ret_pat()), false),
                    (CallBind::Value, Mode::Continue) | (CallBind::Discard, _) => (None, false),
                    (CallBind::Bind(p), _) => (Some(p.clone()), false),
                };
                let term = match target {
                    CallTarget::Direct(f) => Terminator::Call {
                        fname: f.clone(),
                        arity: args.len(),
                        args: args.clone(),
                        ret: ret.clone(),
                        tail,
                    },
                    CallTarget::Indirect(v) => {
                        Terminator::CallIndirect { var: v.clone(), args: args.clone(), ret: ret.clone(), tail }
                    }
                };
                self.close(term);
                self.open(ret, Entry::Landing { bind: landing });
                match (bind, mode) {
                    (CallBind::Value, Mode::Terminate(k)) => self.close(finish(k, ret_var())),
                    (CallBind::Value, _) => {}
                    _ => self.nil(mode),
                }
            }
        }
    }
}

pub(super) fn lower_program(prog: &ChorProgram, role: &Role) -> Result<EndpointProgram, ProjectError> {
    let role_name: Arc<str> = Arc::from(role.as_str());
    let mut blocks = BTreeMap::new();
    let mut functions: BTreeMap<(String, usize), Vec<Clause>> = BTreeMap::new();
    let mut ordinals: BTreeMap<(String, usize), u32> = BTreeMap::new();
    let mut entry = None;
    for f in &prog.functions {
        let body = project_local(&prog.roles, &f.body, role, true).map_err(|e| ProjectError::Merge(Box::new(e)))?;
        let key = (f.name.clone(), f.arity());
        let ordinal = ordinals.entry(key.clone()).or_default();
        let params = projected_params(&f.params, role);
        let mut lw = Lowerer {
            role: role_name.clone(),
            fname: Arc::from(f.name.as_str()),
            arity: f.arity() as u32,
            ordinal,
            blocks: &mut blocks,
            cur: None,
        };
        let start = lw.token();
        lw.open(start.clone(), Entry::Start { params: params.clone() });
        let kind = if f.name == "run" { Kind::Finish } else { Kind::Return };
        lw.seq(&body, Mode::Terminate(kind));
        if lw.cur.is_some() {
            return Err(ProjectError::Internal(format!("{} left a block open", f.key())));
        }
        if f.name == "run" {
            entry = Some(start.clone());
        }
        functions.entry(key).or_default().push(Clause { params, entry: start });
    }
    let entry = entry.ok_or_else(|| ProjectError::Internal("no run function".into()))?;
    Ok(EndpointProgram {
        role: role.clone(),
        blocks,
        functions,
        entry,
        send_sites: BTreeMap::new(),
        required: Default::default(),
    })
}
