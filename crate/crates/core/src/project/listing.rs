//! Human-readable rendering of endpoint programs.

use std::collections::BTreeSet;
use std::fmt::Write;

use super::{Block, EndpointProgram, Entry, Instr, Terminator};

fn join<T: ToString>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn set(s: &BTreeSet<String>) -> String {
    format!("{{{}}}", join(s))
}

fn entry(e: &Entry) -> String {
    match e {
        Entry::Start { params } => format!("start({})", join(params)),
        Entry::Recv { site, from, pattern } => format!("await recv {site} from {from}: {pattern}"),
        Entry::Choice { site, from } => format!("await choice {site} from {from}"),
        Entry::Barrier { site } => format!("await barrier {site}"),
        Entry::Landing { bind: Some(p) } => format!("landing: {p}"),
        Entry::Landing { bind: None } => "landing".into(),
        Entry::Rescue { site } => format!("rescue {site}"),
        Entry::Join => "join".into(),
    }
}

fn instr(i: &Instr) -> String {
    match i {
        Instr::Eval { bind: Some(p), expr } => format!("eval {p} = {expr}"),
        Instr::Eval { bind: None, expr } => format!("eval {expr}"),
        Instr::Send { site, to, expr } => format!("send {site} to {to}: {expr}"),
        Instr::SendChoice { site, dests, var } => format!("send_choice {site} to [{}]: {var}", join(dests)),
        Instr::EnterCheckpoint { site, rescue, exit } => {
            format!("enter_checkpoint {site} rescue={rescue} exit={exit}")
        }
        Instr::ExitCheckpoint { site } => format!("exit_checkpoint {site}"),
    }
}

fn term(t: &Terminator) -> String {
    let tail = |t: bool| if t { " tail" } else { "" };
    match t {
        Terminator::Goto(t) => format!("goto {t}"),
        Terminator::Branch { var, then_t, else_t } => format!("branch {var} ? {then_t} : {else_t}"),
        Terminator::Call { fname, arity, args, ret, tail: tl } => {
            format!("call {fname}/{arity}({}) -> {ret}{}", join(args), tail(*tl))
        }
        Terminator::CallIndirect { var, args, ret, tail: tl } => {
            format!("call_indirect {var}({}) -> {ret}{}", join(args), tail(*tl))
        }
        Terminator::Return(e) => format!("return {e}"),
        Terminator::Finish(e) => format!("finish {e}"),
    }
}

pub fn render_block(b: &Block) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "block {}  {}", b.token, entry(&b.entry));
    let _ = writeln!(out, "  live_in: {}", set(&b.live_in));
    for i in &b.body {
        let _ = writeln!(out, "  {}", instr(i));
    }
    let _ = writeln!(out, "  {}", term(&b.term));
    out
}

/// Full listing: header, required interface, then every block in token order.
pub fn render(ep: &EndpointProgram) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "== {} ==", ep.role);
    let _ = writeln!(out, "entry: {}", ep.entry);
    let _ = writeln!(out, "required: [{}]", join(&ep.required));
    for b in ep.ordered_blocks() {
        out.push('\n');
        out.push_str(&render_block(b));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{parse, Role};
    use crate::project::project;

    #[test]
    fn two_receive_listing() {
        let p = parse(
            "defchor [Alice, Bob, Carol] do def run() do\n\
             Alice.one() ~> Bob.x\n Carol.two() ~> Bob.y\n Bob.(x + y)\n end end",
        )
        .unwrap();
        let l = render(&project(&p, &Role::from("Bob")).unwrap());
        assert_eq!(l.matches("await recv").count(), 2, "{l}");
        assert!(l.contains("block Bob:run/0#1  await recv s0 from Alice: x"), "{l}");
        assert!(l.contains("finish (x + y)"), "{l}");
        let alice = render(&project(&p, &Role::from("Alice")).unwrap());
        assert_eq!(alice.matches("\nblock ").count(), 1, "{alice}");
        assert!(alice.contains("required: [one/0]"));
    }
}
