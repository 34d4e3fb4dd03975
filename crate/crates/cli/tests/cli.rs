use std::path::PathBuf;
use std::process::{Command, Output};

fn programs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../programs")
}

fn choreo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_choreo")).args(args).current_dir(programs()).output().expect("spawn choreo")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(programs().join("golden").join(name)).unwrap()
}

#[test]
fn check_deadlock_matches_golden() {
    let o = choreo(&["check", "deadlock.chor"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr(&o), golden("deadlock.check.txt"));
    assert!(stdout(&o).is_empty());
}

#[test]
fn check_bad_branch_matches_golden() {
    let o = choreo(&["check", "bad_branch.chor"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr(&o), golden("bad_branch.check.txt"));
}

#[test]
fn check_output_is_stable() {
    let a = choreo(&["check", "deadlock.chor"]);
    let b = choreo(&["check", "deadlock.chor"]);
    assert_eq!(a.stderr, b.stderr);
}

#[test]
fn check_ok_lists_interfaces() {
    let o = choreo(&["check", "pie.chor", "--interfaces"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "pie.chor: ok\nAlice: bake_pie/2, fetch_sugar/0, get_money/0\nBob: fetch_apples/1\n");
}

#[test]
fn project_two_receive_has_two_receive_blocks() {
    let o = choreo(&["project", "two_receive.chor", "--role", "Bob"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.contains("await recv")).count(), 2, "{out}");
    assert!(out.contains("from Alice") && out.contains("from Carol"));
}

#[test]
fn project_unknown_role_fails() {
    let o = choreo(&["project", "two_receive.chor", "--role", "Zed"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn run_minimal_recovers_once() {
    for transport in ["mem", "tcp", "sim"] {
        let o = choreo(&["run", "minimal.chor", "--impl", "minimal.chim", "--transport", transport]);
        assert_eq!(o.status.code(), Some(0), "{transport}: {}", stderr(&o));
        assert_eq!(stdout(&o), "Alice: 8\nBob: nil\nrecoveries: 1\n", "{transport}");
    }
}

#[test]
fn run_bookseller_one_party() {
    let o = choreo(&["run", "bookseller.chor", "--impl", "bookseller.chim", "--args", "false"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).lines().any(|l| l == "Buyer: nil"));
}

#[test]
fn run_writes_json_trace() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.jsonl");
    let o = choreo(&[
        "run",
        "minimal.chor",
        "--impl",
        "minimal.chim",
        "--transport",
        "sim",
        "--seed",
        "3",
        "--trace",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&path).unwrap();
    let events: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let count = |log: &str, ev: &str| events.iter().filter(|e| e["log"] == log && e["event"] == ev).count();
    assert_eq!(count("actor", "rescue_enter"), 2);
    assert_eq!(count("monitor", "recover"), 1);
    let times: Vec<u64> = events.iter().map(|e| e["time"].as_u64().or(e["t"].as_u64()).unwrap()).collect();
    assert!(times.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn run_with_missing_impl_function_fails() {
    let o = choreo(&["run", "minimal.chor"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!stderr(&o).is_empty());
}

#[test]
fn missing_file_is_an_io_error() {
    let o = choreo(&["check", "no_such_file.chor"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_flag_is_a_usage_error() {
    let o = choreo(&["run", "minimal.chor", "--transport", "carrier-pigeon"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_reports_plain_baseline_and_variant() {
    let o = choreo(&["bench", "ckpt-demo", "--iters", "20", "--variant", "chk-rescue", "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["recoveries"], 0);
    assert!(rows[1]["recoveries"].as_u64().unwrap() > 0);
    assert_eq!(rows[0]["result"], rows[1]["result"]);
}

#[test]
fn bench_unknown_name_is_a_usage_error() {
    let o = choreo(&["bench", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}
