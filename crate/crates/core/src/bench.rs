//! Generated benchmark choreographies and the harness that times them.
//!
//! Each benchmark comes in three variants: `plain` has no checkpoints, `chk`
//! wraps the per-iteration step in a checkpoint that never fires, and
//! `chk-rescue` crashes deterministically on some iterations. All three
//! compute the same result.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::eval::{fnv1a64, ImplRegistry, ImplTable};
use crate::lang::ast::Role;
use crate::lang::diag::check_program;
use crate::lang::global::eval_global;
use crate::lang::parse;
use crate::project::project_all;
use crate::runtime::session::{prepare, Results, StartError};
use crate::runtime::sim::{run_sim, SimOptions};
use crate::value::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchName {
    Flat,
    Nest,
    CkptDemo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Plain,
    Chk,
    ChkRescue,
}

impl fmt::Display for BenchName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchName::Flat => "flat",
            BenchName::Nest => "nest",
            BenchName::CkptDemo => "ckpt-demo",
        })
    }
}

impl FromStr for BenchName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "flat" => Ok(BenchName::Flat),
            "nest" => Ok(BenchName::Nest),
            "ckpt-demo" => Ok(BenchName::CkptDemo),
            _ => Err(format!("unknown benchmark {s:?} (expected flat, nest or ckpt-demo)")),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Plain => "plain",
            Variant::Chk => "chk",
            Variant::ChkRescue => "chk-rescue",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "plain" => Ok(Variant::Plain),
            "chk" => Ok(Variant::Chk),
            "chk-rescue" | "chk+rescue" => Ok(Variant::ChkRescue),
            _ => Err(format!("unknown variant {s:?} (expected plain, chk or chk-rescue)")),
        }
    }
}

/// Rounds of hashing each role does per `spin` call in `flat`.
pub const DEFAULT_WORK: u32 = 64;

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub name: BenchName,
    pub variant: Variant,
    pub iters: u64,
    pub seed: u64,
    /// Store checkpoint records as deltas; off reproduces full-copy storage.
    pub deltas: bool,
    pub work: u32,
}

impl BenchConfig {
    pub fn new(name: BenchName, variant: Variant, iters: u64) -> BenchConfig {
        BenchConfig { name, variant, iters, seed: 0, deltas: true, work: DEFAULT_WORK }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub name: BenchName,
    pub variant: Variant,
    pub iterations: u64,
    pub wall_ms: f64,
    pub recoveries: u32,
    pub peak_stored_frames: usize,
    pub result: String,
    /// Wall time relative to the plain variant, when it was measured.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio_vs_plain: Option<f64>,
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<10} iters={} wall={:.1}ms recoveries={} peak_frames={}",
            self.name, self.variant, self.iterations, self.wall_ms, self.recoveries, self.peak_stored_frames
        )?;
        if let Some(r) = self.ratio_vs_plain {
            write!(f, " ratio={r:.2}x")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum BenchError {
    #[error("generated program is invalid: {0}")]
    Program(String),
    #[error(transparent)]
    Start(#[from] StartError),
    #[error("run failed: {0}")]
    Run(String),
}

const FLAT: &str = "\
defchor [A, B] do
  def run(A.k, B.every) do
    iterate(A.k, A.(0), B.every, B.(0))
  end

  def iterate(A.k, A.i, B.every, B.acc) do
    if A.(i < k) do
      with B.acc2 <- step(A.(i), B.every, B.(acc)) do
        iterate(A.k, A.(i + 1), B.every, B.(acc2))
      end
    else
      B.(acc)
    end
  end

  def step(A.i, B.every, B.acc) do
STEP
  end
end
";

const FLAT_BODY: &str = "\
    A.({i, spin(i)}) ~> B.{j, x}
    B.crash_if(every > 0 and j rem every == every - 1)
    B.((acc + spin(x)) rem 1000003)";

const FLAT_RESCUE: &str = "\
    A.({i, spin(i)}) ~> B.{j, x}
    B.((acc + spin(x)) rem 1000003)";

const NEST: &str = "\
defchor [A, B] do
  def run(A.d, B.crash) do
    nest(A.d, B.crash)
  end

  def nest(A.d, B.crash) do
    if A.(d > 0) do
STEP
    else
      B.(0)
    end
  end
end
";

const NEST_BODY: &str = "\
      A.(d) ~> B.level
      B.crash_if(level == crash)
      with B.r <- nest(A.(d - 1), B.crash) do
        B.(r + 1)
      end";

const NEST_RESCUE: &str = "\
      A.(d) ~> B.level
      with B.r <- nest(A.(d - 1), B.(0)) do
        B.(r + 1)
      end";

const DEMO: &str = "\
defchor [A, B] do
  def run(A.k, B.every) do
    demo(A.k, A.(0), A.(0), B.every)
  end

  def demo(A.k, A.i, A.h, B.every) do
    if A.(i < k) do
      with A.h2 <- exchange(A.(i), A.(h), B.every) do
        demo(A.k, A.(i + 1), A.(h2), B.every)
      end
    else
      A.(h)
    end
  end

  def exchange(A.i, A.h, B.every) do
STEP
  end
end
";

const DEMO_BODY: &str = "\
    A.({i, h}) ~> B.{j, x}
    B.crash_if(every > 0 and j rem every == every - 1)
    B.(hash64({:block, x})) ~> A.y
    A.(hash64({h, y}))";

const DEMO_RESCUE: &str = "\
    A.({i, h}) ~> B.{j, x}
    B.(hash64({:block, x})) ~> A.y
    A.(hash64({h, y}))";

fn indent(s: &str, by: usize) -> String {
    s.lines().map(|l| format!("{}{l}\n", " ".repeat(by))).collect::<String>().trim_end().to_string()
}

/// Source of the benchmark choreography for `variant`.
pub fn source(name: BenchName, variant: Variant) -> String {
    let (template, body, rescue, depth) = match name {
        BenchName::Flat => (FLAT, FLAT_BODY, FLAT_RESCUE, 4),
        BenchName::Nest => (NEST, NEST_BODY, NEST_RESCUE, 6),
        BenchName::CkptDemo => (DEMO, DEMO_BODY, DEMO_RESCUE, 4),
    };
    let pad = " ".repeat(depth);
    let step = match variant {
        // The rescue text is the body without its crash trigger.
        Variant::Plain => rescue.to_string(),
        Variant::Chk | Variant::ChkRescue => {
            format!("{pad}checkpoint do\n{}\n{pad}rescue\n{}\n{pad}end", indent(body, 2), indent(rescue, 2))
        }
    };
    template.replace("STEP", &step)
}

/// Arguments of `run`: the size and the crash trigger.
pub fn args(cfg: &BenchConfig) -> Vec<Value> {
    let k = cfg.iters as i64;
    let trigger = match (cfg.name, cfg.variant) {
        (_, Variant::Plain | Variant::Chk) => 0,
        // Crash on every tenth iteration.
        (BenchName::Flat | BenchName::CkptDemo, Variant::ChkRescue) => 10,
        // Crash once, halfway down.
        (BenchName::Nest, Variant::ChkRescue) => (k / 2).max(1),
    };
    vec![Value::Int(k), Value::Int(trigger)]
}

fn spin(x: i64, rounds: u32) -> i64 {
    let mut h = x.to_be_bytes();
    for _ in 0..rounds {
        h = fnv1a64(&h).to_be_bytes();
    }
    (u64::from_be_bytes(h) % 1_000_003) as i64
}

pub fn impls(cfg: &BenchConfig) -> ImplRegistry {
    let mut reg = ImplRegistry::new();
    if cfg.name == BenchName::Flat {
        for role in ["A", "B"] {
            let mut t = ImplTable::new();
            let rounds = cfg.work;
            t.define("spin", 1, move |a| match a {
                [Value::Int(x)] => Ok(Value::Int(spin(*x, rounds))),
                _ => Err("spin expects an integer".into()),
            });
            reg.insert(Role::from(role), t);
        }
    }
    reg
}

/// Result of the centralized interpreter, for checking a run.
pub fn oracle(cfg: &BenchConfig) -> Result<Results, BenchError> {
    let prog = parse(&source(cfg.name, cfg.variant)).map_err(|e| BenchError::Program(e.to_string()))?;
    eval_global(&prog, &args(cfg), &impls(cfg)).map(|r| r.values).map_err(|e| BenchError::Run(e.to_string()))
}

fn render(results: &Results) -> String {
    results.iter().map(|(r, v)| format!("{r}: {v}")).collect::<Vec<_>>().join(", ")
}

pub struct BenchRun {
    pub report: BenchReport,
    pub results: Results,
}

/// Build and run one variant on the deterministic scheduler.
pub fn run(cfg: &BenchConfig) -> Result<BenchRun, BenchError> {
    let src = source(cfg.name, cfg.variant);
    let prog = parse(&src).map_err(|e| BenchError::Program(e.to_string()))?;
    let diags = check_program(&prog);
    if !diags.is_empty() {
        return Err(BenchError::Program(diags.render(&src)));
    }
    let eps = project_all(&prog).map_err(|e| BenchError::Program(e.to_string()))?;
    let prepared = prepare(eps.into_values().collect(), &impls(cfg), &args(cfg))?;
    let opts = SimOptions { seed: cfg.seed, deltas: cfg.deltas, record_trace: false, ..Default::default() };
    let start = Instant::now();
    let report = run_sim(vec![prepared], opts)?;
    let wall = start.elapsed();
    if let Some(e) = report.error {
        return Err(BenchError::Run(e.to_string()));
    }
    let s = report.sessions.into_iter().next().expect("one session");
    let results = s.result.map_err(|e| BenchError::Run(e.to_string()))?;
    Ok(BenchRun {
        report: BenchReport {
            name: cfg.name,
            variant: cfg.variant,
            iterations: cfg.iters,
            wall_ms: wall.as_secs_f64() * 1e3,
            recoveries: s.recoveries,
            peak_stored_frames: s.peak_stored_frames,
            result: render(&results),
            ratio_vs_plain: None,
        },
        results,
    })
}

/// Run `cfg` and the plain variant of the same benchmark; fill in the ratio.
pub fn run_with_baseline(cfg: &BenchConfig) -> Result<Vec<BenchReport>, BenchError> {
    let plain = run(&BenchConfig { variant: Variant::Plain, ..cfg.clone() })?.report;
    if cfg.variant == Variant::Plain {
        return Ok(vec![BenchReport { ratio_vs_plain: Some(1.0), ..plain }]);
    }
    let mut other = run(cfg)?.report;
    other.ratio_vs_plain = Some(other.wall_ms / plain.wall_ms);
    Ok(vec![BenchReport { ratio_vs_plain: Some(1.0), ..plain }, other])
}
