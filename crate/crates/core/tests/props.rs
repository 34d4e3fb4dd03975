//! Property tests over generated choreographies, stack deltas and the codec.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use choreo::eval::ImplRegistry;
use choreo::lang::diag::check_program;
use choreo::lang::global::eval_global;
use choreo::lang::{parse, CheckpointSiteId, Role};
use choreo::project::{project_all, EndpointProgram, Entry, Instr, Terminator, Token};
use choreo::recovery::{apply_in_place, compute_delta, full_copy};
use choreo::runtime::state::{snapshot_from_value, snapshot_to_value};
use choreo::runtime::{prepare, run_sim, CkptInstanceId, Frame, SimOptions, Snapshot};
use choreo::wire::codec::{decode_value, encode_value};
use choreo::Value;

const ROLES: [&str; 3] = ["A", "B", "C"];

/// Random well-scoped choreographies over three roles.
struct Gen {
    rng: ChaCha8Rng,
    fresh: u32,
    out: String,
}

type Scope = BTreeMap<&'static str, Vec<String>>;

impl Gen {
    fn role(&mut self) -> &'static str {
        ROLES[self.rng.gen_range(0..ROLES.len())]
    }

    fn atom(&mut self, scope: &Scope, role: &str) -> String {
        let vars = &scope[role];
        if !vars.is_empty() && self.rng.gen_bool(0.7) {
            vars[self.rng.gen_range(0..vars.len())].clone()
        } else {
            self.rng.gen_range(0..10).to_string()
        }
    }

    fn expr(&mut self, scope: &Scope, role: &str) -> String {
        let a = self.atom(scope, role);
        match self.rng.gen_range(0..3) {
            0 => a,
            1 => format!("{a} + {}", self.atom(scope, role)),
            _ => format!("{a} * 2"),
        }
    }

    fn line(&mut self, indent: usize, s: &str) {
        self.out.push_str(&"  ".repeat(indent));
        self.out.push_str(s);
        self.out.push('\n');
    }

    fn block(&mut self, scope: &mut Scope, indent: usize, depth: u32, crash_ok: bool) {
        let n = self.rng.gen_range(1..4);
        for _ in 0..n {
            self.stmt(scope, indent, depth, crash_ok);
        }
    }

    fn stmt(&mut self, scope: &mut Scope, indent: usize, depth: u32, crash_ok: bool) {
        let pick = if depth == 0 { 0 } else { self.rng.gen_range(0..6) };
        match pick {
            3 => {
                let r = self.role();
                let e = self.expr(scope, r);
                let k = self.rng.gen_range(0..12);
                self.line(indent, &format!("if {r}.({e} > {k}) do"));
                self.block(&mut scope.clone(), indent + 1, depth - 1, crash_ok);
                self.line(indent, "else");
                self.block(&mut scope.clone(), indent + 1, depth - 1, crash_ok);
                self.line(indent, "end");
            }
            4 => {
                self.line(indent, "checkpoint do");
                let mut body = scope.clone();
                self.block(&mut body, indent + 1, depth - 1, true);
                if crash_ok || self.rng.gen_bool(0.5) {
                    let r = self.role();
                    let e = self.expr(&body, r);
                    let k = self.rng.gen_range(0..12);
                    self.line(indent + 1, &format!("{r}.crash_if({e} > {k})"));
                }
                self.line(indent, "rescue");
                self.block(&mut scope.clone(), indent + 1, depth - 1, false);
                self.line(indent, "end");
            }
            _ => {
                let s = self.role();
                let r = loop {
                    let r = self.role();
                    if r != s {
                        break r;
                    }
                };
                let e = self.expr(scope, s);
                self.fresh += 1;
                let v = format!("v{}", self.fresh);
                self.line(indent, &format!("{s}.({e}) ~> {r}.{v}"));
                scope.get_mut(r).unwrap().push(v);
            }
        }
    }

    fn program(seed: u64) -> String {
        let mut g = Gen { rng: ChaCha8Rng::seed_from_u64(seed), fresh: 0, out: String::new() };
        g.out.push_str("defchor [A, B, C] do\n  def run() do\n");
        let mut scope: Scope = ROLES.iter().map(|r| (*r, Vec::new())).collect();
        g.block(&mut scope, 2, 3, false);
        let r = g.role();
        let e = g.expr(&scope, r);
        g.line(2, &format!("{r}.({e})"));
        g.out.push_str("  end\nend\n");
        g.out
    }
}

/// Parse, check and project a generated program.
fn endpoints(src: &str) -> BTreeMap<Role, EndpointProgram> {
    let prog = parse(src).unwrap_or_else(|e| panic!("{e}\n{src}"));
    let d = check_program(&prog);
    assert!(d.is_empty(), "{}\n{src}", d.render(src));
    project_all(&prog).unwrap_or_else(|e| panic!("{e}\n{src}"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn generated_programs_are_well_scoped(seed in any::<u64>()) {
        let src = Gen::program(seed);
        let prog = parse(&src).unwrap();
        prop_assert!(check_program(&prog).is_empty(), "{}", src);
    }

    #[test]
    fn reading_an_unbound_variable_is_reported(seed in any::<u64>()) {
        let src = Gen::program(seed);
        // Insert a send of an unbound name right after the header.
        let bad = src.replacen("def run() do\n", "def run() do\n    A.zz ~> B.unused\n", 1);
        let prog = parse(&bad).unwrap();
        let d = check_program(&prog);
        prop_assert!(d.render(&bad).contains("undefined variable \"zz\""), "{}", bad);
    }

    #[test]
    fn sends_and_receives_are_dual(seed in any::<u64>()) {
        let eps = endpoints(&Gen::program(seed));
        let mut sends = BTreeSet::new();
        let mut recvs = BTreeSet::new();
        let mut choice_sends = BTreeSet::new();
        let mut choice_recvs = BTreeSet::new();
        for (role, ep) in &eps {
            for b in ep.blocks.values() {
                match &b.entry {
                    Entry::Recv { site, from, .. } => { recvs.insert((*site, from.clone(), role.clone())); }
                    Entry::Choice { site, from } => { choice_recvs.insert((*site, from.clone(), role.clone())); }
                    _ => {}
                }
                for i in &b.body {
                    match i {
                        Instr::Send { site, to, .. } => { sends.insert((*site, role.clone(), to.clone())); }
                        Instr::SendChoice { site, dests, .. } => {
                            for d in dests {
                                choice_sends.insert((*site, role.clone(), d.clone()));
                            }
                        }
                        _ => {}
                    }
                }
            }
        }
        prop_assert_eq!(sends, recvs);
        prop_assert!(choice_recvs.is_subset(&choice_sends));
    }

    #[test]
    fn every_token_resolves(seed in any::<u64>()) {
        for ep in endpoints(&Gen::program(seed)).values() {
            let known = |t: &Token| ep.blocks.contains_key(t);
            prop_assert!(known(&ep.entry));
            for clauses in ep.functions.values() {
                for c in clauses {
                    prop_assert!(known(&c.entry));
                }
            }
            for b in ep.blocks.values() {
                for t in b.term.tokens() {
                    prop_assert!(known(t), "{} -> {}", b.token, t);
                }
                for i in &b.body {
                    if let Instr::EnterCheckpoint { rescue, exit, .. } = i {
                        prop_assert!(known(rescue) && known(exit));
                    }
                }
                if let Terminator::Call { fname, arity, .. } = &b.term {
                    prop_assert!(ep.functions.contains_key(&(fname.clone(), *arity)));
                }
            }
        }
    }

    #[test]
    fn live_sets_flow_along_edges(seed in any::<u64>()) {
        for ep in endpoints(&Gen::program(seed)).values() {
            prop_assert!(ep.block(&ep.entry).live_in.is_empty());
            for b in ep.blocks.values() {
                for s in b.term.successors() {
                    let succ = &ep.block(s).live_in;
                    prop_assert!(succ.is_subset(&b.live_out), "{} -> {}: {:?} vs {:?}", b.token, s, succ, b.live_out);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn generated_programs_match_the_oracle(seed in any::<u64>(), sched in any::<u64>()) {
        let src = Gen::program(seed);
        let prog = parse(&src).unwrap();
        let none = ImplRegistry::new();
        let expected = eval_global(&prog, &[], &none);
        let eps = project_all(&prog).unwrap().into_values().collect();
        let r = run_sim(vec![prepare(eps, &none, &[]).unwrap()], SimOptions { seed: sched, ..Default::default() }).unwrap();
        match expected {
            Ok(g) => {
                prop_assert_eq!(&r.sessions[0].result, &Ok(g.values.clone()), "{}", src);
                prop_assert_eq!(r.sessions[0].recoveries, g.rescues(), "{}", src);
            }
            // A crash the rescue cannot absorb must abort the session.
            Err(e) => prop_assert!(r.sessions[0].result.is_err(), "{}: {}", e, src),
        }
    }
}

fn token(n: u32) -> Token {
    Token { fname: "f".into(), arity: 1, ordinal: n, role: "A".into() }
}

fn frame(rng: &mut ChaCha8Rng) -> Arc<Frame> {
    let n = rng.gen_range(0..50);
    let saved = (0..rng.gen_range(0..3)).map(|i| (format!("x{i}"), Value::Int(rng.gen_range(0..5)))).collect();
    Arc::new(if rng.gen_bool(0.5) {
        Frame::Return { ret: token(n), saved }
    } else {
        Frame::Checkpoint {
            instance: CkptInstanceId { site: CheckpointSiteId(n % 4), seq: n },
            saved,
            counters: [(CheckpointSiteId(n % 4), n)].into(),
            rescue: token(n + 1),
            exit: token(n + 2),
            rescuing: rng.gen_bool(0.2),
        }
    })
}

/// A run of snapshots where each one keeps a random prefix of the previous stack.
fn snapshots(seed: u64) -> Vec<Snapshot> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cur = Snapshot::default();
    let mut out = Vec::new();
    for _ in 0..rng.gen_range(1..12) {
        let keep = rng.gen_range(0..=cur.stack.len());
        cur.stack.truncate(keep);
        for _ in 0..rng.gen_range(0..4) {
            cur.stack.push(frame(&mut rng));
        }
        for _ in 0..rng.gen_range(0..3) {
            let k = format!("v{}", rng.gen_range(0..6));
            if rng.gen_bool(0.3) {
                cur.vars.remove(&k);
            } else {
                cur.vars.insert(k, Value::Int(rng.gen_range(0..4)));
            }
        }
        cur.counters.insert(CheckpointSiteId(rng.gen_range(0..3)), rng.gen_range(0..9));
        out.push(cur.clone());
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn delta_chain_reproduces_every_snapshot(seed in any::<u64>()) {
        let snaps = snapshots(seed);
        let mut prev = Snapshot::default();
        let mut top = Snapshot::default();
        let mut stored = 0;
        for s in &snaps {
            let d = compute_delta(&prev, s);
            prop_assert!(d.base_len <= prev.stack.len().min(s.stack.len()));
            stored += d.frames();
            apply_in_place(&mut top, &d);
            prop_assert_eq!(&top, s);
            // A full copy restores the same state from anywhere.
            let mut from_full = prev.clone();
            apply_in_place(&mut from_full, &full_copy(s));
            prop_assert_eq!(&from_full, s);
            prev = s.clone();
        }
        let full: usize = snaps.iter().map(|s| s.stack.len()).sum();
        prop_assert!(stored <= full);
    }

    #[test]
    fn snapshots_survive_the_revive_payload(seed in any::<u64>()) {
        for s in snapshots(seed) {
            let v = snapshot_to_value(&s);
            let back = snapshot_from_value(&decode_value(&encode_value(&v)).unwrap()).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}

fn value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Nil),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::Int),
        ".*".prop_map(Value::Str),
        "[a-z_][a-z0-9_]{0,8}".prop_map(Value::Atom),
        ("[a-z_]{1,6}", any::<u8>()).prop_map(|(name, arity)| Value::FuncRef { name, arity }),
    ];
    leaf.prop_recursive(4, 64, 6, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..6).prop_map(Value::Tuple),
            prop::collection::vec(inner, 0..6).prop_map(Value::List),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn codec_round_trips(v in value()) {
        let bytes = encode_value(&v);
        prop_assert_eq!(decode_value(&bytes), Ok(v));
    }
}
