//! Check runner behaviour beyond the acceptance pass lines.

use std::path::PathBuf;

use netdyn::case::{load_case, Case};
use netdyn::verify::{self, check_m1_m2_with, run_checks, A1Init, CheckId, Status};

fn fixture(name: &str) -> Case {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "cases", name].iter().collect();
    load_case(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn shipped_cases_load() {
    for name in ["three_bus_mixed.toml", "near_lossless.toml", "lossless.toml", "two_bus.toml"] {
        let case = fixture(name);
        assert_eq!(case.resources.len(), case.network.n_nodes(), "{name}");
        case.power_flow_case().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    let two = fixture("two_bus.toml");
    assert_eq!((two.network.n_nodes(), two.network.n_edges()), (2, 1));
}

#[test]
fn all_gfl_case_has_no_frequency_reference() {
    let case = fixture("all_gfl.toml");
    let err = case.power_flow_case().unwrap_err();
    assert!(err.to_string().contains("no frequency-forming resource"), "{err}");
}

#[test]
fn mismatched_start_fails_a1() {
    let out = check_m1_m2_with(&fixture("three_bus_mixed.toml"), A1Init::Mismatched { amps: 1.0 });
    assert_eq!(out.status, Status::Fail, "{}", out.line());
    assert!(out.measured.is_finite() && out.measured > out.tolerance);
}

#[test]
fn generator_check_skips_without_generator() {
    let case = fixture("lossless.toml");
    let run = verify::settle(&case).map_err(|e| e.to_string());
    let out = verify::check_sg_pv(&case, &run);
    assert_eq!(out.status, Status::Skipped, "{}", out.line());
    assert!(out.passed());
}

#[test]
fn selected_checks_run_in_order() {
    let ids = [CheckId::A7, CheckId::A6];
    let report = run_checks(&fixture("two_bus.toml"), &ids);
    assert_eq!(report.checks.iter().map(|c| c.id).collect::<Vec<_>>(), ids);
    assert!(report.passed(), "{report}");
    assert!(report.to_string().ends_with("2 checks, 0 failed"));
}
