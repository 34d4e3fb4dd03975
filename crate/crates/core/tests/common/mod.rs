#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use choreo::eval::ImplRegistry;
use choreo::lang::{parse_impls, parse_named, parse_values, ChorProgram, Role};
use choreo::Value;

pub fn programs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../programs")
}

pub fn read(name: &str) -> String {
    std::fs::read_to_string(programs_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn program(name: &str) -> ChorProgram {
    parse_named(name, &read(name)).unwrap_or_else(|e| panic!("{e}"))
}

pub fn impls(name: Option<&str>) -> ImplRegistry {
    match name {
        Some(n) => ImplRegistry::from_modules(parse_impls(n, &read(n)).unwrap_or_else(|e| panic!("{e}"))),
        None => ImplRegistry::new(),
    }
}

pub fn values(src: &str) -> Vec<Value> {
    parse_values(src).unwrap()
}

/// One run of a corpus program with hand-derived expected results.
pub struct Case {
    pub label: &'static str,
    pub chor: &'static str,
    pub chim: Option<&'static str>,
    pub args: &'static str,
    /// Roles not listed end with `nil`.
    pub expected: &'static [(&'static str, &'static str)],
    pub rescues: u32,
}

impl Case {
    pub fn program(&self) -> ChorProgram {
        program(self.chor)
    }

    pub fn impls(&self) -> ImplRegistry {
        impls(self.chim)
    }

    pub fn args(&self) -> Vec<Value> {
        values(self.args)
    }

    pub fn expected(&self) -> BTreeMap<Role, Value> {
        let prog = self.program();
        prog.roles
            .iter()
            .map(|r| {
                let v = self
                    .expected
                    .iter()
                    .find(|(n, _)| *n == r.as_str())
                    .map(|(_, v)| values(v).remove(0))
                    .unwrap_or(Value::Nil);
                (r.clone(), v)
            })
            .collect()
    }
}

pub const CORPUS: &[Case] = &[
    Case {
        label: "minimal-crash",
        chor: "minimal.chor",
        chim: Some("minimal.chim"),
        args: "",
        expected: &[("Alice", "8")],
        rescues: 1,
    },
    Case {
        label: "minimal-ok",
        chor: "minimal_ok.chor",
        chim: Some("minimal.chim"),
        args: "",
        expected: &[("Alice", "8")],
        rescues: 0,
    },
    Case {
        label: "pie",
        chor: "pie.chor",
        chim: Some("pie.chim"),
        args: "",
        expected: &[("Alice", "{:pie, 4, :sugar}")],
        rescues: 0,
    },
    Case {
        label: "bookseller-two-party",
        chor: "bookseller.chor",
        chim: Some("bookseller.chim"),
        args: "true",
        expected: &[("Buyer", "{:date, 2025, 3, 13}")],
        rescues: 0,
    },
    Case {
        label: "bookseller-one-party",
        chor: "bookseller.chor",
        chim: Some("bookseller.chim"),
        args: "false",
        expected: &[],
        rescues: 0,
    },
    Case {
        label: "two-receive",
        chor: "two_receive.chor",
        chim: Some("two_receive.chim"),
        args: "",
        expected: &[("Bob", "3")],
        rescues: 0,
    },
    Case {
        label: "out-of-order",
        chor: "out_of_order.chor",
        chim: Some("out_of_order.chim"),
        args: "",
        expected: &[("Client", "\"attack at dawn\"")],
        rescues: 0,
    },
    Case {
        label: "nested-inner-crash",
        chor: "nested.chor",
        chim: None,
        args: "1",
        expected: &[("C", "101")],
        rescues: 1,
    },
    Case {
        label: "nested-outer-crash",
        chor: "nested.chor",
        chim: None,
        args: "2",
        expected: &[("C", "0")],
        rescues: 1,
    },
    Case { label: "nested-no-crash", chor: "nested.chor", chim: None, args: "3", expected: &[("C", "17")], rescues: 0 },
    Case { label: "loop", chor: "loop.chor", chim: None, args: "3", expected: &[("Acc", "14")], rescues: 0 },
    Case {
        label: "higher-order",
        chor: "higher_order.chor",
        chim: None,
        args: "5",
        expected: &[("Log", "{:logged, 20}")],
        rescues: 0,
    },
    Case {
        label: "ring",
        chor: "ring.chor",
        chim: None,
        args: "7",
        expected: &[("A", "{2, [:c, [:b, [:a]]]}")],
        rescues: 0,
    },
    Case {
        label: "auction",
        chor: "auction.chor",
        chim: Some("auction.chim"),
        args: "30, 20",
        expected: &[("Seller", "{:winner_paid, 30}")],
        rescues: 0,
    },
    Case { label: "retry", chor: "retry.chor", chim: None, args: "6", expected: &[("Worker", "12")], rescues: 2 },
];

pub fn endpoints(prog: &ChorProgram) -> Vec<choreo::project::EndpointProgram> {
    choreo::project::project_all(prog).unwrap().into_values().collect()
}

pub fn prepared(case: &Case) -> choreo::runtime::session::Prepared {
    choreo::runtime::prepare(endpoints(&case.program()), &case.impls(), &case.args()).unwrap()
}
