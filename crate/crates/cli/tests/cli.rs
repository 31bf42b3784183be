//! End-to-end runs of the `netdyn` binary.

use std::path::PathBuf;
use std::process::{Command, Output};

use netdyn::load_case;
use netdyn::steady::omega_ss_lossless;
use netdyn_cli::solution::{residuals, SolutionFile};

fn case(name: &str) -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", "cases", name].iter().collect()
}

fn netdyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netdyn")).args(args).output().expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn simulate_writes_monotone_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.csv");
    let path = case("three_bus_mixed.toml");
    let o = netdyn(&["simulate", path.to_str().unwrap(), "--model", "m2", "--t-end", "1.0", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("time_s,"));
    let times: Vec<f64> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert!(times.windows(2).all(|w| w[1] > w[0]));
    assert!((times.last().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn zero_step_is_a_usage_error() {
    let path = case("two_bus.toml");
    let o = netdyn(&["simulate", path.to_str().unwrap(), "--dt", "0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn malformed_case_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[base]\nomega_s_rad_s = 377.0\nunknown_key = 1\n").unwrap();
    let o = netdyn(&["powerflow", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o.stderr));
    let missing = netdyn(&["freq", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn all_gfl_case_is_rejected() {
    let path = case("all_gfl.toml");
    let o = netdyn(&["powerflow", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("no frequency-forming resource"), "{}", text(&o.stderr));
}

#[test]
fn powerflow_on_lossless_case_matches_closed_form() {
    let path = case("lossless.toml");
    let pf = load_case(&path).unwrap().power_flow_case().unwrap();
    let expected = omega_ss_lossless(&pf).unwrap();
    let o = netdyn(&["powerflow", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let file: SolutionFile = serde_json::from_slice(&o.stdout).unwrap();
    assert!((file.omega_ss_rad_s - expected).abs() < 1e-10);
    assert!(file.comparison.is_none());

    let f = netdyn(&["freq", path.to_str().unwrap()]);
    assert!(text(&f.stdout).contains(&format!("omega_ss_rad_s = {expected}")));
}

#[test]
fn m3prime_reports_comparison() {
    let path = case("three_bus_mixed.toml");
    let o = netdyn(&["powerflow", path.to_str().unwrap(), "--model", "m3p"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let file: SolutionFile = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(file.model, "m3p");
    let cmp = file.comparison.expect("comparison block");
    assert_eq!(cmp.against, "m3");
    assert_eq!(cmp.delta_e_v_rms.len(), file.buses.len());
}

#[test]
fn solution_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pf.json");
    let path = case("three_bus_mixed.toml");
    let o = netdyn(&["powerflow", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let file: SolutionFile = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let pf = load_case(&path).unwrap().power_flow_case().unwrap();
    let again = residuals(&pf, &file.solution()).unwrap();
    let r = &file.residuals;
    for (a, b) in [
        (again.bus_power_w, r.bus_power_w),
        (again.bus_voltage_v_rms, r.bus_voltage_v_rms),
        (again.network_interface_v_rms, r.network_interface_v_rms),
        (again.network_lines_v_rms, r.network_lines_v_rms),
        (again.network_kcl_a_rms, r.network_kcl_a_rms),
    ] {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    assert!(r.bus_power_w < 1e-6 * 1000.0);
    // The generator holds its setpoint, which equals the voltage base.
    let sg = file.buses.iter().find(|b| b.kind == "sg").unwrap();
    assert!((sg.per_unit.as_ref().unwrap().e_mag_pu - 1.0).abs() < 1e-9);
}

#[test]
fn verify_subset_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let path = case("three_bus_mixed.toml");
    let o = netdyn(&["verify", path.to_str().unwrap(), "--only", "a6", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o.stdout));
    assert!(text(&o.stdout).contains("A6  PASS"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["checks"].as_array().unwrap().len(), 1);
    assert_eq!(report["checks"][0]["status"], "pass");
}

#[test]
fn verify_mixed_case_passes() {
    let path = case("three_bus_mixed.toml");
    let o = netdyn(&["verify", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stdout));
    assert!(text(&o.stdout).contains("10 checks, 0 failed"));
}

#[test]
fn unknown_check_is_a_usage_error() {
    let path = case("two_bus.toml");
    assert_eq!(netdyn(&["verify", path.to_str().unwrap(), "--only", "a11"]).status.code(), Some(1));
}
