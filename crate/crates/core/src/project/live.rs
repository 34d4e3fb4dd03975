//! Backward live-variable analysis over handler blocks.

use std::collections::{BTreeMap, BTreeSet};

use super::{choice_var, Block, Entry, Instr, Terminator, Token};
use crate::lang::ast::{Expr, Pattern};
use crate::lang::pattern::pattern_vars;

type Set = BTreeSet<String>;

fn kill_bind(live: &mut Set, p: &Pattern) {
    let pv = pattern_vars(p);
    for v in &pv.bound {
        live.remove(v);
    }
    live.extend(pv.used);
}

fn gen_expr(live: &mut Set, e: &Expr) {
    live.extend(e.free_vars());
}

fn term_uses(t: &Terminator) -> Set {
    let mut s = Set::new();
    match t {
        Terminator::Goto(_) => {}
        Terminator::Branch { var, .. } => {
            s.insert(var.clone());
        }
        Terminator::Call { args, .. } => args.iter().for_each(|a| gen_expr(&mut s, a)),
        Terminator::CallIndirect { var, args, .. } => {
            s.insert(var.clone());
            args.iter().for_each(|a| gen_expr(&mut s, a));
        }
        Terminator::Return(e) | Terminator::Finish(e) => gen_expr(&mut s, e),
    }
    s
}

/// Variables live at the top of the block's body, given its live-out set.
fn transfer(b: &Block, live_out: &Set, live_in: &BTreeMap<Token, Set>) -> Set {
    let mut live = live_out.clone();
    live.extend(term_uses(&b.term));
    for i in b.body.iter().rev() {
        match i {
            Instr::Eval { bind, expr } => {
                if let Some(p) = bind {
                    kill_bind(&mut live, p);
                }
                gen_expr(&mut live, expr);
            }
            Instr::Send { expr, .. } => gen_expr(&mut live, expr),
            Instr::SendChoice { var, .. } => {
                live.insert(var.clone());
            }
            Instr::EnterCheckpoint { rescue, .. } => {
                // The rescue path resumes from the state saved here.
                if let Some(r) = live_in.get(rescue) {
                    live.extend(r.iter().cloned());
                }
            }
            Instr::ExitCheckpoint { .. } => {}
        }
    }
    match &b.entry {
        Entry::Start { params } => params.iter().for_each(|p| kill_bind(&mut live, p)),
        Entry::Recv { pattern, .. } => kill_bind(&mut live, pattern),
        Entry::Landing { bind: Some(p) } => kill_bind(&mut live, p),
        Entry::Choice { site, .. } => {
            live.remove(&choice_var(*site));
        }
        Entry::Landing { bind: None } | Entry::Barrier { .. } | Entry::Rescue { .. } | Entry::Join => {}
    }
    live
}

/// Annotate every block with `live_in`/`live_out`, iterating to a fixpoint.
/// A call's live-out is the live-in of its landing block: exactly the
/// variables the caller must keep across the call.
pub fn live_variables(blocks: &mut BTreeMap<Token, Block>) {
    let mut live_in: BTreeMap<Token, Set> = blocks.keys().map(|t| (t.clone(), Set::new())).collect();
    let mut live_out: BTreeMap<Token, Set> = live_in.clone();
    loop {
        let mut changed = false;
        for b in blocks.values().rev() {
            let mut out = Set::new();
            for s in b.term.successors() {
                if let Some(l) = live_in.get(s) {
                    out.extend(l.iter().cloned());
                }
            }
            let inn = transfer(b, &out, &live_in);
            if inn != live_in[&b.token] || out != live_out[&b.token] {
                changed = true;
                live_in.insert(b.token.clone(), inn);
                live_out.insert(b.token.clone(), out);
            }
        }
        if !changed {
            break;
        }
    }
    for (t, b) in blocks.iter_mut() {
        b.live_in = live_in.remove(t).unwrap_or_default();
        b.live_out = live_out.remove(t).unwrap_or_default();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{parse, Role};
    use crate::project::project;

    fn set(xs: &[&str]) -> Set {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn second_receive_keeps_x_alive() {
        let p = parse(
            "defchor [Alice, Bob, Carol] do def run() do\n\
             Alice.one() ~> Bob.x\n Carol.two() ~> Bob.y\n Bob.(x + y)\n end end",
        )
        .unwrap();
        let ep = project(&p, &Role::from("Bob")).unwrap();
        let recvs: Vec<_> = ep.blocks.values().filter(|b| matches!(b.entry, Entry::Recv { .. })).collect();
        assert_eq!(recvs.len(), 2);
        assert_eq!(recvs[0].live_in, set(&[]));
        assert_eq!(recvs[1].live_in, set(&["x"]));
    }

    #[test]
    fn straight_line_live_in_is_free_vars() {
        let p = parse("defchor [A] do def run(A.a) do A.(a + 1); A.(a * 2) end end").unwrap();
        let ep = project(&p, &Role::from("A")).unwrap();
        let b = ep.block(&ep.entry);
        // params are bound by the entry itself
        assert_eq!(b.live_in, set(&[]));
        let Entry::Start { params } = &b.entry else { panic!() };
        assert_eq!(params.len(), 1);
    }

    #[test]
    fn loop_carried_variables() {
        let p = parse(
            "defchor [A, B] do\n def run() do loop(A.(3), B.(0)) end\n\
             def loop(A.n, B.acc) do\n A.(n) ~> B.m\n\
             if A.(n > 0) do loop(A.(n - 1), B.(acc + m)) else B.(acc) end\n end\nend",
        )
        .unwrap();
        let ep = project(&p, &Role::from("B")).unwrap();
        let recv = ep.blocks.values().find(|b| matches!(b.entry, Entry::Recv { .. })).unwrap();
        assert_eq!(recv.live_in, set(&["acc"]));
    }
}
