//! `choreo`: check, project, run and benchmark choreographies.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use choreo::bench::{self, BenchConfig, BenchName, Variant};
use choreo::eval::ImplRegistry;
use choreo::lang::diag::{check_program, render_parse};
use choreo::lang::{parse_impls, parse_named, parse_values, ChorProgram, Role};
use choreo::project::listing::render;
use choreo::project::{project, project_all, required_functions};
use choreo::recovery::AuditRecord;
use choreo::runtime::{prepare, run_sim, start_session, Results, SessionOptions, SimOptions, TraceEvent};
use choreo::transport::mem::MemTransport;
use choreo::transport::tcp::TcpTransport;
use choreo::transport::Transport;

#[derive(Parser)]
#[command(name = "choreo", version, about = "Choreographic programming toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Mem,
    Tcp,
    /// Deterministic single-threaded scheduler.
    Sim,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and run the static checks.
    Check {
        file: PathBuf,
        /// Print the impl functions each role must provide.
        #[arg(long)]
        interfaces: bool,
    },
    /// Print the projected endpoint programs.
    Project {
        file: PathBuf,
        #[arg(long)]
        role: Option<String>,
    },
    /// Run a choreography and print each role's result.
    Run {
        file: PathBuf,
        #[arg(long = "impl")]
        impls: Option<PathBuf>,
        /// Comma-separated arguments of `run`, e.g. `3, "x", {:ok, 1}`.
        #[arg(long, default_value = "")]
        args: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "mem")]
        transport: TransportArg,
        /// Write trace and audit events as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Seconds to wait for results.
        #[arg(long, default_value_t = 30)]
        timeout: u64,
    },
    /// Run a generated benchmark against its plain baseline.
    Bench {
        name: String,
        #[arg(long, default_value_t = 1000)]
        iters: u64,
        #[arg(long, default_value = "chk")]
        variant: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Store full snapshots instead of deltas.
        #[arg(long)]
        no_deltas: bool,
        /// Hash rounds per `spin` call in `flat`.
        #[arg(long, default_value_t = bench::DEFAULT_WORK)]
        work: u32,
        #[arg(long)]
        json: bool,
    },
}

/// A failure with its exit code: 1 for check and run failures, 2 for usage and I/O.
struct Failure {
    code: u8,
    message: String,
}

fn fail(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure { code: 2, message: format!("{e:#}") }
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn display_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Parse and check `path`; failures carry the rendered diagnostics.
fn load(path: &Path) -> Result<(ChorProgram, String), Failure> {
    let src = read(path)?;
    let prog = parse_named(&display_name(path), &src).map_err(|e| fail(render_parse(&e, &src)))?;
    let d = check_program(&prog);
    if !d.is_empty() {
        return Err(fail(d.render(&src)));
    }
    Ok((prog, src))
}

fn cmd_check(file: &Path, interfaces: bool) -> Result<(), Failure> {
    let (prog, _) = load(file)?;
    project_all(&prog).map_err(|e| fail(e.to_string()))?;
    println!("{}: ok", display_name(file));
    if interfaces {
        for role in &prog.roles {
            let fs: Vec<String> = required_functions(&prog, role).iter().map(|f| f.to_string()).collect();
            println!("{role}: {}", fs.join(", "));
        }
    }
    Ok(())
}

fn cmd_project(file: &Path, role: Option<String>) -> Result<(), Failure> {
    let (prog, _) = load(file)?;
    let roles = match role {
        Some(r) => {
            let r = Role::new(r);
            if !prog.has_role(&r) {
                return Err(fail(format!("unknown role {r}")));
            }
            vec![r]
        }
        None => prog.roles.clone(),
    };
    for (i, r) in roles.iter().enumerate() {
        let ep = project(&prog, r).map_err(|e| fail(e.to_string()))?;
        if i > 0 {
            println!();
        }
        print!("{}", render(&ep));
    }
    Ok(())
}

fn write_trace(path: &Path, trace: &[TraceEvent], audit: &[AuditRecord]) -> anyhow::Result<()> {
    let mut lines: Vec<(u64, serde_json::Value)> = Vec::new();
    for e in trace {
        let mut v = serde_json::to_value(e)?;
        v["log"] = "actor".into();
        lines.push((e.time, v));
    }
    for a in audit {
        let mut v = serde_json::to_value(a)?;
        v["log"] = "monitor".into();
        lines.push((a.t, v));
    }
    lines.sort_by_key(|(t, _)| *t);
    let mut f =
        std::io::BufWriter::new(fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?);
    for (_, v) in lines {
        writeln!(f, "{v}")?;
    }
    Ok(())
}

struct RunArgs {
    file: PathBuf,
    impls: Option<PathBuf>,
    args: String,
    seed: Option<u64>,
    transport: TransportArg,
    trace: Option<PathBuf>,
    timeout: u64,
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let (prog, _) = load(&a.file)?;
    let impls = match &a.impls {
        Some(p) => {
            let src = read(p)?;
            let mods = parse_impls(&display_name(p), &src).map_err(|e| fail(render_parse(&e, &src)))?;
            ImplRegistry::from_modules(mods)
        }
        None => ImplRegistry::new(),
    };
    let args = parse_values(&a.args).map_err(|e| Failure { code: 2, message: format!("bad --args: {}", e.message) })?;
    let eps: Vec<_> = project_all(&prog).map_err(|e| fail(e.to_string()))?.into_values().collect();
    let (outcome, recoveries, trace, audit): (Result<Results, String>, u32, _, _) = match a.transport {
        TransportArg::Sim => {
            let prepared = prepare(eps, &impls, &args).map_err(|e| fail(e.to_string()))?;
            let opts = SimOptions { seed: a.seed.unwrap_or(0), record_trace: a.trace.is_some(), ..Default::default() };
            let r = run_sim(vec![prepared], opts).map_err(|e| fail(e.to_string()))?;
            let s = &r.sessions[0];
            (s.result.clone().map_err(|e| e.to_string()), s.recoveries, r.trace, r.audit)
        }
        TransportArg::Mem | TransportArg::Tcp => {
            let t: Arc<dyn Transport> = match a.transport {
                TransportArg::Tcp => Arc::new(TcpTransport::new()),
                _ => Arc::new(MemTransport::new()),
            };
            let opts = SessionOptions { seed: a.seed, ..Default::default() };
            let mut h = start_session(eps, &impls, &args, t, opts).map_err(|e| fail(e.to_string()))?;
            let r = h.await_results(Duration::from_secs(a.timeout)).map_err(|e| e.to_string());
            h.shutdown();
            (r, h.stats().recoveries, h.trace(), h.audit())
        }
    };
    if let Some(p) = &a.trace {
        write_trace(p, &trace, &audit)?;
    }
    let results = outcome.map_err(fail)?;
    for role in &prog.roles {
        println!("{role}: {}", results.get(role).cloned().unwrap_or(choreo::Value::Nil));
    }
    println!("recoveries: {recoveries}");
    Ok(())
}

fn cmd_bench(
    name: &str,
    iters: u64,
    variant: &str,
    seed: u64,
    deltas: bool,
    work: u32,
    json: bool,
) -> Result<(), Failure> {
    let name: BenchName = name.parse().map_err(|e: String| Failure { code: 2, message: e })?;
    let variant: Variant = variant.parse().map_err(|e: String| Failure { code: 2, message: e })?;
    let cfg = BenchConfig { name, variant, iters, seed, deltas, work };
    let reports = bench::run_with_baseline(&cfg).map_err(|e| fail(e.to_string()))?;
    for r in reports {
        if json {
            println!("{}", serde_json::to_string(&r).map_err(|e| fail(e.to_string()))?);
        } else {
            println!("{r}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Check { file, interfaces } => cmd_check(&file, interfaces),
        Cmd::Project { file, role } => cmd_project(&file, role),
        Cmd::Run { file, impls, args, seed, transport, trace, timeout } => {
            cmd_run(RunArgs { file, impls, args, seed, transport, trace, timeout })
        }
        Cmd::Bench { name, iters, variant, seed, no_deltas, work, json } => {
            cmd_bench(&name, iters, &variant, seed, !no_deltas, work, json)
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let _ = std::io::stdout().flush();
            eprint!("{}", f.message);
            if !f.message.ends_with('\n') {
                eprintln!();
            }
            ExitCode::from(f.code)
        }
    }
}
