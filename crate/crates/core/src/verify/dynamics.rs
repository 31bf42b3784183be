use num_complex::Complex64;

use super::{CheckId, CheckOutcome};
use crate::case::Case;
use crate::network::NetworkSpec;
use crate::resources::GfmParams;
use crate::sim::{
    extract_steady, run, InitMode, Integrator, ModelKind, NodeResource, SimConfig, SimError, SteadyDetect, System,
    Trajectory,
};
use crate::steady::{bus_residual, omega_ss_lossless, PhasorSolution, PowerFlowModel};

pub const A1_TOL: f64 = 1e-6;
pub const A1_HORIZON: f64 = 0.5;
pub const A1_DT: f64 = 1e-5;
pub const A2_TOL: f64 = 1e-3;
pub const A3_TOL: f64 = 1e-4;
pub const A4_TOL: f64 = 1e-6;
pub const A5_TOL: f64 = 1e-2;
pub const A10_RANGE: (f64, f64) = (12.0, 20.0);

/// Line resistance as a fraction of line reactance in the near-lossless
/// variant.
pub const NEAR_LOSSLESS_RATIO: f64 = 1e-4;

const SETTLE_DT: f64 = 5e-5;
const SETTLE_HORIZON: f64 = 60.0;
const SETTLE_WINDOW: f64 = 0.5;
const SETTLE_TOL: f64 = 1e-7;

/// A case run to steady state in the DQ model.
#[derive(Debug, Clone)]
pub struct Settled {
    pub case: Case,
    pub trajectory: Trajectory,
    pub solution: PhasorSolution,
}

/// Copy of `case` with every line resistance set to a fixed small fraction
/// of its reactance at the synchronous frequency.
pub fn near_lossless(case: &Case) -> Case {
    let n = &case.network;
    let r = n.l_line().iter().map(|l| NEAR_LOSSLESS_RATIO * case.omega_s * l).collect();
    let network = NetworkSpec::new(
        n.n_nodes(),
        n.edges().to_vec(),
        r,
        n.l_line().to_vec(),
        n.r_iface().to_vec(),
        n.l_iface().to_vec(),
    )
    .expect("only line resistances change");
    Case { network, ..case.clone() }
}

/// Runs the DQ model from the case's initialisation until the derivative
/// test holds for the detection window.
pub fn settle(case: &Case) -> Result<Settled, SimError> {
    let sys = case.assemble(ModelKind::M2)?;
    let x0 = sys.initial_state(case.init_mode())?;
    let config = SimConfig {
        t_end: SETTLE_HORIZON,
        dt: SETTLE_DT,
        integrator: Integrator::Rk4,
        record_stride: 20_000,
        steady_detect: Some(SteadyDetect { window: SETTLE_WINDOW, tol: SETTLE_TOL, stop: true }),
    };
    let trajectory = run(&sys, &x0, &config)?;
    let solution = extract_steady(&trajectory)?;
    Ok(Settled { case: case.clone(), trajectory, solution })
}

/// Initial states for the A1 comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum A1Init {
    /// Both models from the same flat start.
    Matched,
    /// The phase-domain model starts with a balanced offset of this many
    /// amperes on its first network current.
    Mismatched { amps: f64 },
}

pub fn check_m1_m2(case: &Case) -> CheckOutcome {
    check_m1_m2_with(case, A1Init::Matched)
}

fn simulate(case: &Case, model: ModelKind, offset: f64) -> Result<Trajectory, SimError> {
    let sys = case.assemble(model)?;
    let mut x0 = sys.initial_state(InitMode::Flat)?;
    if offset != 0.0 {
        let at = *sys
            .layout()
            .network_phasors(sys.network().n_edges())
            .first()
            .ok_or_else(|| SimError::Config("no network current to offset".into()))?;
        x0[at] += offset;
        x0[at + 1] -= offset;
    }
    let config = SimConfig {
        t_end: A1_HORIZON,
        dt: A1_DT,
        integrator: Integrator::Rk4,
        record_stride: 10,
        steady_detect: None,
    };
    run(&sys, &x0, &config)
}

/// Maximum deviation between M1 currents rotated into the synchronous
/// frame and M2 currents, relative to the largest M2 current.
pub fn check_m1_m2_with(case: &Case, init: A1Init) -> CheckOutcome {
    let offset = match init {
        A1Init::Matched => 0.0,
        A1Init::Mismatched { amps } => amps,
    };
    let runs = simulate(case, ModelKind::M1, offset).and_then(|a| Ok((a, simulate(case, ModelKind::M2, 0.0)?)));
    let (abc, dq) = match runs {
        Ok(r) => r,
        Err(e) => return CheckOutcome::failed(CheckId::A1, A1_TOL, e.to_string()),
    };
    let to_dq = |tr: &Trajectory, t: f64, z: Complex64| z * Complex64::from_polar(1.0, (tr.frame_frequency - tr.omega_s) * t);
    let mut err: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (ra, rb) in abc.records.iter().zip(&dq.records) {
        let a = ra.signals.i.iter().chain(&ra.signals.f);
        let b = rb.signals.i.iter().chain(&rb.signals.f);
        for (&za, &zb) in a.zip(b) {
            let za = to_dq(&abc, ra.t, za);
            let zb = to_dq(&dq, rb.t, zb);
            err = err.max((za - zb).norm());
            scale = scale.max(zb.norm());
        }
    }
    let rel = err / scale.max(f64::MIN_POSITIVE);
    CheckOutcome::bound(
        CheckId::A1,
        rel,
        A1_TOL,
        format!("{} samples over {} s, RK4 dt {:e} s", dq.records.len(), A1_HORIZON, A1_DT),
    )
    .with_extra("max_abs_err_a", err)
}

fn settled_or_fail(id: CheckId, tol: f64, run: &Result<Settled, String>) -> Result<&Settled, CheckOutcome> {
    run.as_ref().map_err(|e| CheckOutcome::failed(id, tol, format!("run did not settle: {e}")))
}

/// Settled frequency of the near-lossless variant against the closed form.
pub fn check_frequency_closed_form(case: &Case, run: &Result<Settled, String>) -> CheckOutcome {
    let s = match settled_or_fail(CheckId::A2, A2_TOL, run) {
        Ok(s) => s,
        Err(o) => return o,
    };
    let closed = match case.power_flow_case().and_then(|pf| omega_ss_lossless(&pf)) {
        Ok(w) => w,
        Err(e) => return CheckOutcome::failed(CheckId::A2, A2_TOL, e.to_string()),
    };
    let measured = s.solution.omega_ss;
    CheckOutcome::bound(
        CheckId::A2,
        (measured - closed).abs(),
        A2_TOL,
        format!("rad/s, settled at t = {:.2} s", s.trajectory.final_time),
    )
    .with_extra("omega_ss_rad_s", measured)
    .with_extra("closed_form_rad_s", closed)
}

/// Residual of the frequency-aware power-flow equations at the settled
/// phasors, relative to base power (bus rows) and voltage scale.
pub fn check_steady_consistency(_case: &Case, run: &Result<Settled, String>) -> CheckOutcome {
    let s = match settled_or_fail(CheckId::A3, A3_TOL, run) {
        Ok(s) => s,
        Err(o) => return o,
    };
    let pf = match s.case.power_flow_case() {
        Ok(pf) => pf,
        Err(e) => return CheckOutcome::failed(CheckId::A3, A3_TOL, e.to_string()),
    };
    let sol = &s.solution;
    let (power, volt) = match bus_residual(&pf, &sol.e, &sol.p, &sol.q, sol.omega_ss, PowerFlowModel::M3) {
        Ok(r) => r,
        Err(e) => return CheckOutcome::failed(CheckId::A3, A3_TOL, e.to_string()),
    };
    let v_scale = sol.e.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let network = sol.network_residual(&s.case.network, s.case.omega_s).max();
    let base = pf.base_power();
    let measured = (power / base).max(volt / v_scale).max(network / v_scale);
    CheckOutcome::bound(CheckId::A3, measured, A3_TOL, format!("base power {base:.4e} W"))
        .with_extra("bus_power_w", power)
        .with_extra("bus_voltage_v", volt)
        .with_extra("network", network)
}

/// Settled power of every grid-following inverter against its setpoint.
pub fn check_gfl_tracking(run: &Result<Settled, String>) -> CheckOutcome {
    let s = match settled_or_fail(CheckId::A4, A4_TOL, run) {
        Ok(s) => s,
        Err(o) => return o,
    };
    let mut worst: Option<f64> = None;
    for (k, r) in s.case.resources.iter().enumerate() {
        if let NodeResource::Gfl(p) = r {
            let got = Complex64::new(s.solution.p[k], s.solution.q[k]);
            let d = got - p.s_star;
            let e = d.re.abs().max(d.im.abs()) / p.s_star.norm();
            worst = Some(worst.map_or(e, |w| w.max(e)));
        }
    }
    match worst {
        Some(e) => CheckOutcome::bound(CheckId::A4, e, A4_TOL, "relative to |S*|"),
        None => CheckOutcome::skipped(CheckId::A4, "case has no grid-following inverter"),
    }
}

/// Settled generator voltage against its setpoint and settled power
/// against the droop line at the measured frequency.
pub fn check_sg_pv(case: &Case, run: &Result<Settled, String>) -> CheckOutcome {
    if !case.resources.iter().any(|r| matches!(r, NodeResource::Sg(_))) {
        return CheckOutcome::skipped(CheckId::A5, "case has no synchronous generator");
    }
    let s = match settled_or_fail(CheckId::A5, A5_TOL, run) {
        Ok(s) => s,
        Err(o) => return o,
    };
    let info = s.trajectory.steady.as_ref().expect("settled runs carry steady info");
    let sig = &info.record.signals;
    let (mut e_err, mut p_err): (f64, f64) = (0.0, 0.0);
    for (k, r) in case.resources.iter().enumerate() {
        if let NodeResource::Sg(p) = r {
            e_err = e_err.max((sig.e_mag[k] - p.e_star).abs() / p.e_star);
            let line = p.p_star - (info.omega_ss - case.omega_s) / p.r_droop;
            p_err = p_err.max((sig.p[k] - line).abs() / line.abs().max(p.p_star.abs()).max(f64::MIN_POSITIVE));
        }
    }
    CheckOutcome::bound(CheckId::A5, e_err.max(p_err), A5_TOL, "relative")
        .with_extra("voltage_rel", e_err)
        .with_extra("droop_line_rel", p_err)
}

/// Two droop inverters on one line, started flat.
fn order_system() -> System {
    let w = 2.0 * std::f64::consts::PI * 60.0;
    let net = NetworkSpec::new(2, vec![(0, 1)], vec![0.05], vec![2e-3], vec![0.02; 2], vec![1e-3; 2])
        .expect("valid network");
    let res = vec![
        NodeResource::Gfm(GfmParams::droop(2e-3, 0.01, 0.1, 100.0, 0.0, 150.0)),
        NodeResource::Gfm(GfmParams::droop(4e-3, 0.01, 0.1, -40.0, 0.0, 150.0)),
    ];
    System::new(net, res, w, ModelKind::M2).expect("valid system")
}

fn final_state(sys: &System, x0: &[f64], h: f64, t_end: f64) -> Result<Vec<f64>, SimError> {
    let config = SimConfig { t_end, dt: h, integrator: Integrator::Rk4, record_stride: usize::MAX, steady_detect: None };
    Ok(run(sys, x0, &config)?.final_state)
}

/// Ratio of RK4 global errors at step `h` and `h/2` against a fine
/// reference solution.
pub fn check_integrator_order() -> CheckOutcome {
    let sys = order_system();
    let x0 = sys.flat_start();
    let (t_end, h) = (0.02, 2e-4);
    let sols = [h, h / 2.0, h / 64.0].map(|dt| final_state(&sys, &x0, dt, t_end));
    let [Ok(coarse), Ok(fine), Ok(reference)] = sols else {
        return CheckOutcome::failed(CheckId::A10, A10_RANGE.1, "integration failed");
    };
    let err = |x: &[f64]| x.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let (e1, e2) = (err(&coarse), err(&fine));
    let ratio = e1 / e2;
    let mut out = CheckOutcome::bound(
        CheckId::A10,
        ratio,
        A10_RANGE.1,
        format!("error ratio for h = {h:e} s and h/2, must lie in [{}, {}]", A10_RANGE.0, A10_RANGE.1),
    );
    if !(ratio >= A10_RANGE.0 && ratio <= A10_RANGE.1) {
        out.status = super::Status::Fail;
    }
    out.with_extra("err_h", e1).with_extra("err_h2", e2)
}
