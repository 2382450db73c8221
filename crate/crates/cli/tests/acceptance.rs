//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

use std::io::Write;
use std::sync::OnceLock;

use gradual_cli::acceptance::{self, Acceptance, CriterionResult, SEEDED};
use gradual_cli::{ExperimentConfig, RunDir};

fn ctx() -> &'static Acceptance {
    static CTX: OnceLock<Acceptance> = OnceLock::new();
    CTX.get_or_init(|| Acceptance::new(ExperimentConfig::default().seed))
}

fn result(id: u8) -> &'static CriterionResult {
    static RESULTS: [OnceLock<CriterionResult>; 11] = [const { OnceLock::new() }; 11];
    RESULTS[id as usize - 1].get_or_init(|| {
        let r = ctx().run(id).unwrap_or_else(|e| panic!("criterion {id} errored: {e}"));
        report(&r);
        r
    })
}

/// Written to stderr directly so the line shows without `--nocapture`.
fn report(r: &CriterionResult) {
    let _ = writeln!(std::io::stderr(), "{}", r.line());
}

fn check(id: u8) {
    let r = result(id);
    assert!(r.passed, "{}", r.line());
}

#[test]
fn criterion_01_descent_from_infinity() {
    check(1);
}

#[test]
fn criterion_02_fokker_planck_ou() {
    check(2);
}

#[test]
fn criterion_03_invariant_convergence() {
    check(3);
}

#[test]
fn criterion_04_gradual_convergence() {
    check(4);
}

#[test]
fn criterion_05_profile_shape() {
    check(5);
}

#[test]
fn criterion_06_no_cutoff_verdict() {
    check(6);
}

#[test]
fn criterion_07_mixing_asymptotics() {
    check(7);
}

#[test]
fn criterion_08_mc_fp_agreement() {
    check(8);
}

#[test]
fn criterion_09_coupling_order() {
    check(9);
}

#[test]
fn criterion_10_l2_envelope() {
    check(10);
}

#[test]
fn criterion_11_tv_continuity_at_infinity() {
    check(11);
}

#[test]
fn criterion_12_determinism() {
    let cfg = ExperimentConfig::default();
    let tmp = tempfile::tempdir().unwrap();
    let reference = RunDir::at(tmp.path().join("first"), "reproduce-all", &cfg).unwrap();
    for id in SEEDED {
        reference
            .write_table(&format!("criterion_{id:02}.csv"), &result(id).table)
            .unwrap();
    }
    let r = acceptance::determinism(&cfg, &reference, &tmp.path().join("second")).unwrap();
    report(&r);
    assert!(r.passed, "{}", r.line());
}
