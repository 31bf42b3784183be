use std::path::PathBuf;

use netdyn::case::{load_case, Case};
use netdyn::sim::{extract_steady, run, InitMode, ModelKind, SimConfig, SimError, SteadyDetect};

fn fixture(name: &str) -> Case {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "cases", name].iter().collect();
    load_case(path).unwrap()
}

fn short(model: ModelKind, t_end: f64) -> SimConfig {
    SimConfig { record_stride: 1, ..SimConfig::for_model(model, t_end) }
}

#[test]
fn layout_counts_states() {
    let case = fixture("three_bus_mixed.toml");
    let m1 = case.assemble(ModelKind::M1).unwrap();
    let m2 = case.assemble(ModelKind::M2).unwrap();
    let m2p = case.assemble(ModelKind::M2Prime).unwrap();
    // two lines: three phases in M1, d and q in M2, none when algebraic
    assert_eq!(m1.dim() - m2.dim(), 2 + m1.layout().nodes.iter().filter(|n| n.current.is_some()).count());
    assert_eq!(m2.dim() - m2p.dim(), 2 * 2);
    assert_eq!(m2.layout().names.len(), m2.dim());
    assert!(m2p.layout().lines.is_none());
}

#[test]
fn zero_horizon_returns_initial_record() {
    let case = fixture("two_bus.toml");
    let sys = case.assemble(ModelKind::M2).unwrap();
    let x0 = sys.initial_state(InitMode::Flat).unwrap();
    let tr = run(&sys, &x0, &short(ModelKind::M2, 0.0)).unwrap();
    assert_eq!(tr.records.len(), 1);
    assert_eq!(tr.final_state, x0);
    assert_eq!(tr.final_time, 0.0);
}

#[test]
fn last_step_lands_on_horizon() {
    let case = fixture("two_bus.toml");
    let sys = case.assemble(ModelKind::M2).unwrap();
    let x0 = sys.initial_state(InitMode::Flat).unwrap();
    let config = SimConfig { t_end: 0.0105, dt: 1e-3, record_stride: 4, ..SimConfig::for_model(ModelKind::M2, 0.0) };
    let tr = run(&sys, &x0, &config).unwrap();
    assert_eq!(tr.final_time, 0.0105);
    let times: Vec<f64> = tr.records.iter().map(|r| r.t).collect();
    assert_eq!(times, [0.0, 0.004, 0.008, 0.0105]);
}

#[test]
fn runs_are_deterministic() {
    let case = fixture("three_bus_mixed.toml");
    let sys = case.assemble(ModelKind::M2).unwrap();
    let x0 = sys.initial_state(InitMode::Flat).unwrap();
    let a = run(&sys, &x0, &short(ModelKind::M2, 0.01)).unwrap();
    let b = run(&sys, &x0, &short(ModelKind::M2, 0.01)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn power_flow_start_is_an_equilibrium() {
    // M3 start for M2: exact. M3' start for M2': interface inductances still
    // see the slip, so only a small transient is allowed.
    for (model, p_tol, e_tol) in [(ModelKind::M2, 1e-6, 1e-8), (ModelKind::M2Prime, 1e-3, 1e-5)] {
        let case = fixture("near_lossless.toml");
        let sys = case.assemble(model).unwrap();
        let x0 = sys.initial_state(InitMode::PowerFlow).unwrap();
        let tr = run(&sys, &x0, &SimConfig::for_model(model, 0.2)).unwrap();
        let first = &tr.records[0].signals;
        for r in &tr.records {
            for k in 0..first.p.len() {
                assert!((r.signals.p[k] - first.p[k]).abs() < p_tol * 300.0, "{model:?} t={} node {k}", r.t);
                assert!((r.signals.e_mag[k] - first.e_mag[k]).abs() < e_tol * 150.0, "{model:?} t={} node {k}", r.t);
            }
        }
    }
}

#[test]
fn dq_and_phase_models_agree_from_power_flow() {
    let case = fixture("two_bus.toml");
    let trs: Vec<_> = [ModelKind::M1, ModelKind::M2]
        .into_iter()
        .map(|m| {
            let sys = case.assemble(m).unwrap();
            let x0 = sys.initial_state(InitMode::PowerFlow).unwrap();
            run(&sys, &x0, &short(m, 0.05)).unwrap()
        })
        .collect();
    for (a, b) in trs[0].records.iter().zip(&trs[1].records) {
        let rot = num_complex::Complex64::from_polar(1.0, -case.omega_s * a.t);
        for k in 0..2 {
            assert!((a.signals.i[k] * rot - b.signals.i[k]).norm() < 1e-9 * b.signals.i[k].norm().max(1.0));
        }
    }
}

#[test]
fn settled_injections_balance_losses() {
    let case = fixture("two_bus.toml");
    let sys = case.assemble(ModelKind::M2).unwrap();
    let x0 = sys.initial_state(InitMode::Flat).unwrap();
    let mut cfg = SimConfig::for_model(ModelKind::M2, 20.0);
    cfg.dt = 5e-5;
    cfg.steady_detect = Some(SteadyDetect { window: 0.5, tol: 1e-9, stop: true });
    let tr = run(&sys, &x0, &cfg).unwrap();
    let sol = extract_steady(&tr).unwrap();
    let net = &case.network;
    let losses: f64 = (0..net.n_edges()).map(|e| 3.0 * net.r_line()[e] * sol.f[e].norm_sqr()).sum::<f64>()
        + (0..net.n_nodes()).map(|k| 3.0 * net.r_iface()[k] * sol.i[k].norm_sqr()).sum::<f64>();
    let injected: f64 = sol.p.iter().sum();
    assert!(losses > 0.0);
    assert!((injected - losses).abs() < 1e-6 * 100.0, "injected {injected} losses {losses}");
}

#[test]
fn bad_configuration_is_rejected() {
    let case = fixture("two_bus.toml");
    let sys = case.assemble(ModelKind::M2).unwrap();
    let x0 = sys.initial_state(InitMode::Flat).unwrap();
    let mut cfg = short(ModelKind::M2, 0.1);
    cfg.dt = 0.0;
    assert!(matches!(run(&sys, &x0, &cfg), Err(SimError::Config(_))));
    assert!(matches!(run(&sys, &x0[1..], &short(ModelKind::M2, 0.1)), Err(SimError::Config(_))));
    let mut cfg = short(ModelKind::M2, 0.1);
    cfg.steady_detect = Some(SteadyDetect { window: 0.5, ..Default::default() });
    assert!(matches!(run(&sys, &x0, &cfg), Err(SimError::Config(_))));
}

#[test]
fn resource_count_must_match_nodes() {
    let case = fixture("two_bus.toml");
    let err = netdyn::sim::System::new(case.network.clone(), case.resources[..1].to_vec(), case.omega_s, ModelKind::M2)
        .unwrap_err();
    assert!(err.to_string().contains("every node hosts exactly one resource"));
}
