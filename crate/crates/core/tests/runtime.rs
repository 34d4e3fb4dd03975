mod common;

use std::sync::Arc;
use std::time::Duration;

use choreo::runtime::{run_sim, start_session, SessionOptions, SimOptions};
use choreo::transport::mem::MemTransport;
use choreo::transport::tcp::TcpTransport;
use choreo::transport::Transport;
use common::{endpoints, prepared, CORPUS};

#[test]
fn sim_matches_expected_results_across_seeds() {
    for case in CORPUS {
        for seed in 0..20 {
            let r = run_sim(vec![prepared(case)], SimOptions { seed, ..Default::default() }).unwrap();
            assert_eq!(r.error, None, "{} seed {seed}", case.label);
            let s = &r.sessions[0];
            assert_eq!(s.result, Ok(case.expected()), "{} seed {seed}", case.label);
            assert_eq!(s.recoveries, case.rescues, "{} seed {seed}", case.label);
        }
    }
}

fn threaded(t: Arc<dyn Transport>) {
    for case in CORPUS {
        let h = start_session(
            endpoints(&case.program()),
            &case.impls(),
            &case.args(),
            t.clone(),
            SessionOptions::default(),
        )
        .unwrap();
        let r = h.await_results(Duration::from_secs(20));
        assert_eq!(r, Ok(case.expected()), "{} over {}", case.label, t.kind());
        assert_eq!(h.stats().recoveries, case.rescues, "{}", case.label);
    }
}

#[test]
fn mem_transport_runs_corpus() {
    threaded(Arc::new(MemTransport::new()));
}

#[test]
fn tcp_transport_runs_corpus() {
    threaded(Arc::new(TcpTransport::new()));
}
