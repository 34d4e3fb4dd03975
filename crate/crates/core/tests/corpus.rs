mod common;

use choreo::lang::diag::check_program;
use choreo::lang::global::eval_global;
use choreo::project::project_all;
use common::CORPUS;

#[test]
fn corpus_programs_pass_static_checks() {
    for case in CORPUS {
        let d = check_program(&case.program());
        assert!(d.is_empty(), "{}: {}", case.label, d.render(&common::read(case.chor)));
        project_all(&case.program()).unwrap_or_else(|e| panic!("{}: {e}", case.label));
    }
}

#[test]
fn oracle_matches_hand_derived_results() {
    for case in CORPUS {
        let r =
            eval_global(&case.program(), &case.args(), &case.impls()).unwrap_or_else(|e| panic!("{}: {e}", case.label));
        assert_eq!(r.values, case.expected(), "{}", case.label);
        assert_eq!(r.rescues(), case.rescues, "{}", case.label);
    }
}
