use super::{CheckId, CheckOutcome};
use crate::case::Case;
use crate::steady::{
    solve_m3, solve_m3prime, voltage_discrepancy, BusModel, PhasorSolution, PowerFlowCase, SteadyError,
};

pub const A9_TOL: f64 = 1e-8;

/// Copy of `case` with every droop setpoint moved to the power the bus
/// delivers in the frequency-aware solution, so the new solution sits at the
/// synchronous frequency.
pub fn zero_offset_case(case: &PowerFlowCase) -> Result<PowerFlowCase, SteadyError> {
    let sol = solve_m3(case)?;
    let buses = case
        .buses
        .iter()
        .zip(&sol.p)
        .map(|(b, &p)| match *b {
            BusModel::Sg { e_rms, r_droop, .. } => BusModel::Sg { p_star: p, e_rms, r_droop },
            BusModel::Gfm { q_star, e_rms, m_p, m_q, .. } => BusModel::Gfm { p_star: p, q_star, e_rms, m_p, m_q },
            gfl => gfl,
        })
        .collect();
    let mut out = PowerFlowCase::with_reference(case.network.clone(), buses, case.omega_s, case.reference)?;
    out.options = case.options;
    Ok(out)
}

/// Largest difference between two solutions: voltages relative to the
/// largest magnitude, powers relative to base power, frequency in rad/s.
fn solution_gap(a: &PhasorSolution, b: &PhasorSolution, base: f64) -> f64 {
    let v_scale = a.e.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let volt = voltage_discrepancy(a, b).into_iter().fold(0.0, f64::max) / v_scale;
    let power = a
        .p
        .iter()
        .zip(&b.p)
        .chain(a.q.iter().zip(&b.q))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / base;
    volt.max(power).max((a.omega_ss - b.omega_ss).abs())
}

fn solve_pair(case: &PowerFlowCase) -> Result<(PhasorSolution, PhasorSolution), SteadyError> {
    Ok((solve_m3(case)?, solve_m3prime(case)?))
}

/// Frequency-aware and synchronous-frequency power flows coincide when the
/// steady frequency is synchronous; on the case as given their voltage
/// discrepancy is measured and reported.
pub fn check_m3_m3prime(case: &Case) -> CheckOutcome {
    let pf = match case.power_flow_case() {
        Ok(pf) => pf,
        Err(e) => return CheckOutcome::failed(CheckId::A9, A9_TOL, e.to_string()),
    };
    let engineered = zero_offset_case(&pf).and_then(|c| Ok((solve_pair(&c)?, c.base_power())));
    let ((a, b), base) = match engineered {
        Ok(r) => r,
        Err(e) => return CheckOutcome::failed(CheckId::A9, A9_TOL, e.to_string()),
    };
    let mut out = CheckOutcome::bound(
        CheckId::A9,
        solution_gap(&a, &b, base),
        A9_TOL,
        "setpoints moved to the synchronous-frequency operating point",
    )
    .with_extra("zero_offset_omega_gap_rad_s", a.omega_ss - pf.omega_s);
    match solve_pair(&pf) {
        Ok((m3, m3p)) => {
            let dv = voltage_discrepancy(&m3, &m3p).into_iter().fold(0.0, f64::max);
            out = out
                .with_extra("case_omega_offset_rad_s", m3.omega_ss - pf.omega_s)
                .with_extra("case_max_delta_e_v", dv);
        }
        Err(e) => out.detail.push_str(&format!("; case as given: {e}")),
    }
    out
}
