//! Frequency-aware power flow and its synchronous-frequency variant.
//!
//! Unknowns are `[|E| (N), delta (N), P (N), Q (N), omega_ss]` in RMS
//! phasor units. Each node contributes two injection equations and two
//! resource equations; the reference angle closes the system.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{
    admittance_reduced, admittance_reduced_derivative, back_substitute, steady_residual_m3, NetworkError, NetworkSpec,
    SteadyResidual,
};
use crate::resources::{GfmParams, GflParams, SgParams};

const J: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SteadyError {
    #[error("no frequency-forming resource: at least one synchronous generator or grid-forming inverter is required")]
    NoFrequencyForming,
    #[error("case has {buses} bus models for {nodes} network nodes")]
    BusCount { buses: usize, nodes: usize },
    #[error("reference bus {0} is out of range")]
    BadReference(usize),
    #[error("invalid setpoint `{name}` at node {node}: {reason}")]
    Setpoint { node: usize, name: &'static str, reason: String },
    #[error("power flow did not converge in {iterations} iterations (scaled residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("power-flow Jacobian is singular at iteration {0}")]
    SingularJacobian(usize),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Steady-state behaviour of one resource, in RMS units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BusModel {
    /// Governor droop on P, regulated voltage magnitude.
    Sg { p_star: f64, e_rms: f64, r_droop: f64 },
    /// Fixed active and reactive injection.
    Gfl { p_star: f64, q_star: f64 },
    /// Frequency and voltage droop.
    Gfm { p_star: f64, q_star: f64, e_rms: f64, m_p: f64, m_q: f64 },
}

impl BusModel {
    pub fn from_sg(p: &SgParams) -> Self {
        let (_, e_rms) = crate::resources::sg_steady(p, 0.0, 0.0);
        BusModel::Sg { p_star: p.p_star, e_rms, r_droop: p.r_droop }
    }

    pub fn from_gfl(p: &GflParams) -> Self {
        BusModel::Gfl { p_star: p.s_star.re, q_star: p.s_star.im }
    }

    pub fn from_gfm(p: &GfmParams) -> Self {
        BusModel::Gfm { p_star: p.p_star, q_star: p.q_star, e_rms: p.e_star_rms(), m_p: p.m_p, m_q: p.m_q_rms() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BusModel::Sg { .. } => "sg",
            BusModel::Gfl { .. } => "gfl",
            BusModel::Gfm { .. } => "gfm",
        }
    }

    pub fn p_star(&self) -> f64 {
        match *self {
            BusModel::Sg { p_star, .. } | BusModel::Gfl { p_star, .. } | BusModel::Gfm { p_star, .. } => p_star,
        }
    }

    /// Inverse frequency droop, zero for resources without one.
    pub fn frequency_stiffness(&self) -> f64 {
        match *self {
            BusModel::Sg { r_droop, .. } => 1.0 / r_droop,
            BusModel::Gfm { m_p, .. } => 1.0 / m_p,
            BusModel::Gfl { .. } => 0.0,
        }
    }

    fn voltage_setpoint(&self) -> Option<f64> {
        match *self {
            BusModel::Sg { e_rms, .. } | BusModel::Gfm { e_rms, .. } => Some(e_rms),
            BusModel::Gfl { .. } => None,
        }
    }

    fn validate(&self, node: usize) -> Result<(), SteadyError> {
        let bad = |name, reason: &str| Err(SteadyError::Setpoint { node, name, reason: reason.to_string() });
        let finite = [self.p_star()].into_iter().all(f64::is_finite);
        if !finite {
            return bad("p_star", "must be finite");
        }
        match *self {
            BusModel::Sg { e_rms, r_droop, .. } => {
                if !(e_rms > 0.0) {
                    return bad("e_star", "must be positive");
                }
                if !(r_droop > 0.0) {
                    return bad("r_droop", "must be positive");
                }
            }
            BusModel::Gfl { q_star, .. } => {
                if !q_star.is_finite() {
                    return bad("q_star", "must be finite");
                }
            }
            BusModel::Gfm { q_star, e_rms, m_p, m_q, .. } => {
                if !q_star.is_finite() {
                    return bad("q_star", "must be finite");
                }
                if !(e_rms > 0.0) {
                    return bad("e_star", "must be positive");
                }
                if !(m_p > 0.0 && m_q > 0.0) {
                    return bad("m_p/m_q", "droop slopes must be positive");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Relative to the base power for power rows and to the voltage scale
    /// for voltage rows.
    pub tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iterations: 50, tolerance: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct PowerFlowCase {
    pub network: NetworkSpec,
    pub buses: Vec<BusModel>,
    pub reference: usize,
    pub omega_s: f64,
    pub options: SolverOptions,
}

impl PowerFlowCase {
    /// Case with the default reference bus: the lowest-index generator, else
    /// the lowest-index grid-forming inverter.
    pub fn new(network: NetworkSpec, buses: Vec<BusModel>, omega_s: f64) -> Result<Self, SteadyError> {
        let reference = default_reference(&buses)?;
        Self::with_reference(network, buses, omega_s, reference)
    }

    pub fn with_reference(
        network: NetworkSpec,
        buses: Vec<BusModel>,
        omega_s: f64,
        reference: usize,
    ) -> Result<Self, SteadyError> {
        if buses.len() != network.n_nodes() {
            return Err(SteadyError::BusCount { buses: buses.len(), nodes: network.n_nodes() });
        }
        if reference >= buses.len() {
            return Err(SteadyError::BadReference(reference));
        }
        if !(omega_s > 0.0 && omega_s.is_finite()) {
            return Err(NetworkError::BadFrequency(omega_s).into());
        }
        for (n, b) in buses.iter().enumerate() {
            b.validate(n)?;
        }
        default_reference(&buses)?;
        Ok(Self { network, buses, reference, omega_s, options: SolverOptions::default() })
    }

    pub fn n(&self) -> usize {
        self.buses.len()
    }

    /// Scale for power residuals.
    pub fn base_power(&self) -> f64 {
        self.buses
            .iter()
            .map(|b| match *b {
                BusModel::Gfl { p_star, q_star } | BusModel::Gfm { p_star, q_star, .. } => p_star.hypot(q_star),
                BusModel::Sg { p_star, .. } => p_star.abs(),
            })
            .fold(1.0, f64::max)
    }

    fn voltage_scale(&self) -> f64 {
        self.buses.iter().filter_map(BusModel::voltage_setpoint).fold(1.0, f64::max)
    }
}

fn default_reference(buses: &[BusModel]) -> Result<usize, SteadyError> {
    buses
        .iter()
        .position(|b| matches!(b, BusModel::Sg { .. }))
        .or_else(|| buses.iter().position(|b| matches!(b, BusModel::Gfm { .. })))
        .ok_or(SteadyError::NoFrequencyForming)
}

/// Which admittance the network equations use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PowerFlowModel {
    /// Admittance evaluated at the unknown steady frequency.
    M3,
    /// Admittance frozen at the synchronous frequency.
    M3Prime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasorSolution {
    pub model: PowerFlowModel,
    /// Terminal voltages behind the interface branches, RMS.
    pub e: Vec<Complex64>,
    pub delta: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub omega_ss: f64,
    /// Injected currents, RMS.
    pub i: Vec<Complex64>,
    /// Node voltages, RMS.
    pub v: Vec<Complex64>,
    /// Line currents, RMS.
    pub f: Vec<Complex64>,
    pub iterations: usize,
    /// Scaled infinity norm of the final Newton residual.
    pub residual: f64,
}

impl PhasorSolution {
    /// Network residuals at the frequency the admittance was built at.
    pub fn network_residual(&self, spec: &NetworkSpec, omega_s: f64) -> SteadyResidual {
        let w = match self.model {
            PowerFlowModel::M3 => self.omega_ss,
            PowerFlowModel::M3Prime => omega_s,
        };
        steady_residual_m3(spec, &self.e, &self.v, &self.i, &self.f, w)
    }
}

fn phasors(mag: &[f64], delta: &[f64]) -> Vec<Complex64> {
    mag.iter().zip(delta).map(|(&m, &d)| Complex64::from_polar(m, d)).collect()
}

/// Active and reactive injections at RMS terminal voltages `|E| e^{j delta}`,
/// written with the conductance and susceptance parts of `Y(omega)`.
pub fn injections(
    e_mag: &[f64],
    delta: &[f64],
    omega: f64,
    net: &NetworkSpec,
) -> Result<(Vec<f64>, Vec<f64>), SteadyError> {
    let y = admittance_reduced(net, omega)?.y;
    Ok(injections_with(&y, e_mag, delta))
}

fn injections_with(y: &DMatrix<Complex64>, e_mag: &[f64], delta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = e_mag.len();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for a in 0..n {
        for b in 0..n {
            let (g, s) = (y[(a, b)].re, y[(a, b)].im);
            let (sin, cos) = (delta[a] - delta[b]).sin_cos();
            let m = 3.0 * e_mag[a] * e_mag[b];
            p[a] += m * (g * cos + s * sin);
            q[a] += m * (g * sin - s * cos);
        }
    }
    (p, q)
}

/// Closed-form steady frequency of a lossless network.
pub fn omega_ss_lossless(case: &PowerFlowCase) -> Result<f64, SteadyError> {
    omega_ss_lossless_from(&case.buses, case.omega_s)
}

pub fn omega_ss_lossless_from(buses: &[BusModel], omega_s: f64) -> Result<f64, SteadyError> {
    let stiffness: f64 = buses.iter().map(BusModel::frequency_stiffness).sum();
    if !(stiffness > 0.0) {
        return Err(SteadyError::NoFrequencyForming);
    }
    Ok(omega_s + buses.iter().map(BusModel::p_star).sum::<f64>() / stiffness)
}

struct Layout {
    n: usize,
}

impl Layout {
    fn mag(&self, k: usize) -> usize {
        k
    }
    fn ang(&self, k: usize) -> usize {
        self.n + k
    }
    fn p(&self, k: usize) -> usize {
        2 * self.n + k
    }
    fn q(&self, k: usize) -> usize {
        3 * self.n + k
    }
    fn omega(&self) -> usize {
        4 * self.n
    }
    fn len(&self) -> usize {
        4 * self.n + 1
    }
}

struct Evaluation {
    residual: DVector<f64>,
    jacobian: DMatrix<f64>,
}

/// Residual rows: `[P balance (N), Q balance (N), resource P-row (N),
/// resource Q/V-row (N), reference angle]`.
fn evaluate(case: &PowerFlowCase, model: PowerFlowModel, x: &DVector<f64>) -> Result<Evaluation, SteadyError> {
    let n = case.n();
    let lay = Layout { n };
    let omega = x[lay.omega()];
    let w_net = match model {
        PowerFlowModel::M3 => omega,
        PowerFlowModel::M3Prime => case.omega_s,
    };
    let y = admittance_reduced(&case.network, w_net)?.y;
    let mag: Vec<f64> = (0..n).map(|k| x[lay.mag(k)]).collect();
    let ang: Vec<f64> = (0..n).map(|k| x[lay.ang(k)]).collect();
    let e = DVector::from_vec(phasors(&mag, &ang));
    let i = &y * &e;
    let s = e.zip_map(&i, |e, i| 3.0 * e * i.conj());

    let mut r = DVector::zeros(lay.len());
    let mut jac = DMatrix::zeros(lay.len(), lay.len());
    for a in 0..n {
        r[a] = x[lay.p(a)] - s[a].re;
        r[n + a] = x[lay.q(a)] - s[a].im;
        jac[(a, lay.p(a))] = 1.0;
        jac[(n + a, lay.q(a))] = 1.0;
    }
    for k in 0..n {
        let unit = Complex64::from_polar(1.0, ang[k]);
        for (col, u) in [(lay.mag(k), unit), (lay.ang(k), J * e[k])] {
            for a in 0..n {
                let mut ds = e[a] * (y[(a, k)] * u).conj();
                if a == k {
                    ds += u * i[a].conj();
                }
                ds *= 3.0;
                jac[(a, col)] = -ds.re;
                jac[(n + a, col)] = -ds.im;
            }
        }
    }
    if model == PowerFlowModel::M3 {
        let dy = admittance_reduced_derivative(&case.network, omega)?;
        let di = dy * &e;
        for a in 0..n {
            let ds = 3.0 * e[a] * di[a].conj();
            jac[(a, lay.omega())] = -ds.re;
            jac[(n + a, lay.omega())] = -ds.im;
        }
    }

    let dw = omega - case.omega_s;
    for (k, bus) in case.buses.iter().enumerate() {
        let (rp, rq) = (2 * n + k, 3 * n + k);
        let (p, q) = (x[lay.p(k)], x[lay.q(k)]);
        jac[(rp, lay.p(k))] = 1.0;
        match *bus {
            BusModel::Sg { p_star, e_rms, r_droop } => {
                r[rp] = p - (p_star - dw / r_droop);
                jac[(rp, lay.omega())] = 1.0 / r_droop;
                r[rq] = mag[k] - e_rms;
                jac[(rq, lay.mag(k))] = 1.0;
            }
            BusModel::Gfl { p_star, q_star } => {
                r[rp] = p - p_star;
                r[rq] = q - q_star;
                jac[(rq, lay.q(k))] = 1.0;
            }
            BusModel::Gfm { p_star, q_star, e_rms, m_p, m_q } => {
                r[rp] = p - (p_star - dw / m_p);
                jac[(rp, lay.omega())] = 1.0 / m_p;
                r[rq] = q - (q_star - (mag[k] - e_rms) / m_q);
                jac[(rq, lay.q(k))] = 1.0;
                jac[(rq, lay.mag(k))] = 1.0 / m_q;
            }
        }
    }
    r[4 * n] = ang[case.reference];
    jac[(4 * n, lay.ang(case.reference))] = 1.0;
    Ok(Evaluation { residual: r, jacobian: jac })
}

/// Row weights that bring every residual to a relative scale.
fn row_scale(case: &PowerFlowCase) -> DVector<f64> {
    let n = case.n();
    let (sp, sv) = (case.base_power(), case.voltage_scale());
    let mut w = DVector::from_element(4 * n + 1, 1.0 / sp);
    for (k, bus) in case.buses.iter().enumerate() {
        if matches!(bus, BusModel::Sg { .. }) {
            w[3 * n + k] = 1.0 / sv;
        }
    }
    w[4 * n] = 1.0;
    w
}

fn initial_guess(case: &PowerFlowCase) -> Result<DVector<f64>, SteadyError> {
    let n = case.n();
    let lay = Layout { n };
    let set: Vec<f64> = case.buses.iter().filter_map(BusModel::voltage_setpoint).collect();
    let e_avg = set.iter().sum::<f64>() / set.len() as f64;
    let mut x = DVector::zeros(lay.len());
    for (k, b) in case.buses.iter().enumerate() {
        x[lay.mag(k)] = b.voltage_setpoint().unwrap_or(e_avg);
        x[lay.p(k)] = b.p_star();
    }
    x[lay.omega()] = omega_ss_lossless(case)?;
    Ok(x)
}

/// Newton iteration with step halving on the scaled residual.
fn solve(case: &PowerFlowCase, model: PowerFlowModel) -> Result<PhasorSolution, SteadyError> {
    let w = row_scale(case);
    let mut x = initial_guess(case)?;
    let mut ev = evaluate(case, model, &x)?;
    let norm = |r: &DVector<f64>| r.component_mul(&w).amax();
    let mut res = norm(&ev.residual);
    let mut it = 0;
    while res >= case.options.tolerance {
        if it == case.options.max_iterations {
            return Err(SteadyError::NotConverged { iterations: it, residual: res });
        }
        it += 1;
        let step = ev.jacobian.clone().lu().solve(&ev.residual).ok_or(SteadyError::SingularJacobian(it))?;
        if !step.iter().all(|v| v.is_finite()) {
            return Err(SteadyError::SingularJacobian(it));
        }
        let mut alpha = 1.0;
        loop {
            let trial = &x - alpha * &step;
            match evaluate(case, model, &trial) {
                Ok(e) if norm(&e.residual) < res || alpha < 1e-3 => {
                    x = trial;
                    res = norm(&e.residual);
                    ev = e;
                    break;
                }
                Err(err) if alpha < 1e-3 => return Err(err),
                _ => alpha *= 0.5,
            }
        }
    }
    Ok(finish(case, model, &x, it, res))
}

fn finish(case: &PowerFlowCase, model: PowerFlowModel, x: &DVector<f64>, iterations: usize, residual: f64) -> PhasorSolution {
    let n = case.n();
    let lay = Layout { n };
    let omega_ss = x[lay.omega()];
    let w_net = match model {
        PowerFlowModel::M3 => omega_ss,
        PowerFlowModel::M3Prime => case.omega_s,
    };
    let mag: Vec<f64> = (0..n).map(|k| x[lay.mag(k)]).collect();
    // remove the rounding-level offset left on the reference angle
    let shift = x[lay.ang(case.reference)];
    let delta: Vec<f64> = (0..n).map(|k| x[lay.ang(k)] - shift).collect();
    let e = phasors(&mag, &delta);
    let y = admittance_reduced(&case.network, w_net).expect("admittance was formed during the solve").y;
    let i: Vec<Complex64> = (&y * DVector::from_column_slice(&e)).iter().copied().collect();
    let (v, f) = back_substitute(&case.network, &e, &i, w_net);
    PhasorSolution {
        model,
        e,
        delta,
        p: (0..n).map(|k| x[lay.p(k)]).collect(),
        q: (0..n).map(|k| x[lay.q(k)]).collect(),
        omega_ss,
        i,
        v,
        f,
        iterations,
        residual,
    }
}

pub fn solve_m3(case: &PowerFlowCase) -> Result<PhasorSolution, SteadyError> {
    solve(case, PowerFlowModel::M3)
}

pub fn solve_m3prime(case: &PowerFlowCase) -> Result<PhasorSolution, SteadyError> {
    solve(case, PowerFlowModel::M3Prime)
}

/// Residual of the bus equations for an arbitrary phasor state, evaluated
/// independently of the Newton bookkeeping. Returns the largest power
/// mismatch in W/var and the largest voltage-setpoint mismatch in V.
pub fn bus_residual(
    case: &PowerFlowCase,
    e: &[Complex64],
    p: &[f64],
    q: &[f64],
    omega_ss: f64,
    model: PowerFlowModel,
) -> Result<(f64, f64), SteadyError> {
    let w_net = match model {
        PowerFlowModel::M3 => omega_ss,
        PowerFlowModel::M3Prime => case.omega_s,
    };
    let mag: Vec<f64> = e.iter().map(|z| z.norm()).collect();
    let ang: Vec<f64> = e.iter().map(|z| z.arg()).collect();
    let (pi, qi) = injections(&mag, &ang, w_net, &case.network)?;
    let dw = omega_ss - case.omega_s;
    let mut power: f64 = 0.0;
    let mut volt: f64 = 0.0;
    for (k, bus) in case.buses.iter().enumerate() {
        power = power.max((p[k] - pi[k]).abs()).max((q[k] - qi[k]).abs());
        match *bus {
            BusModel::Sg { p_star, e_rms, r_droop } => {
                power = power.max((p[k] - p_star + dw / r_droop).abs());
                volt = volt.max((mag[k] - e_rms).abs());
            }
            BusModel::Gfl { p_star, q_star } => {
                power = power.max((p[k] - p_star).abs()).max((q[k] - q_star).abs());
            }
            BusModel::Gfm { p_star, q_star, e_rms, m_p, m_q } => {
                power = power
                    .max((p[k] - p_star + dw / m_p).abs())
                    .max((q[k] - q_star + (mag[k] - e_rms) / m_q).abs());
            }
        }
    }
    Ok((power, volt))
}

/// Per-node terminal-voltage difference between two solutions.
pub fn voltage_discrepancy(a: &PhasorSolution, b: &PhasorSolution) -> Vec<f64> {
    a.e.iter().zip(&b.e).map(|(x, y)| (x - y).norm()).collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const W: f64 = 376.99111843077515;

    fn path(n: usize, r: f64, l: f64, r_i: f64, l_i: f64) -> NetworkSpec {
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|k| (k, k + 1)).collect();
        NetworkSpec::new(n, edges, vec![r; n - 1], vec![l; n - 1], vec![r_i; n], vec![l_i; n]).unwrap()
    }

    fn mixed(r: f64) -> PowerFlowCase {
        let buses = vec![
            BusModel::Sg { p_star: 300.0, e_rms: 70.0, r_droop: 2e-3 },
            BusModel::Gfm { p_star: 200.0, q_star: 20.0, e_rms: 71.0, m_p: 3e-3, m_q: 0.02 },
            BusModel::Gfl { p_star: -600.0, q_star: -50.0 },
        ];
        PowerFlowCase::new(path(3, r, 2e-3, r, 1e-3), buses, W).unwrap()
    }

    #[test]
    fn two_bus_lossless_injection() {
        let net = path(2, 0.0, 0.01, 0.0, 1e-3);
        let (p, q) = injections(&[70.0, 69.0], &[0.1, 0.0], W, &net).unwrap();
        let y = admittance_reduced(&net, W).unwrap().y;
        let b12 = y[(0, 1)].im;
        assert!((p[0] - 3.0 * 70.0 * 69.0 * b12 * 0.1f64.sin()).abs() < 1e-9);
        assert!((p[0] + p[1]).abs() < 1e-10);
        let e = DVector::from_vec(phasors(&[70.0, 69.0], &[0.1, 0.0]));
        let s = e.zip_map(&(&y * &e), |e, i| 3.0 * e * i.conj());
        assert!((s[1].im - q[1]).abs() < 1e-9);
    }

    #[test]
    fn equal_phasors_inject_nothing_when_lossless() {
        let net = path(4, 0.0, 0.01, 0.0, 1e-3);
        let (p, _) = injections(&[70.0; 4], &[0.2; 4], W, &net).unwrap();
        assert!(p.iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn closed_form_frequency() {
        let buses = vec![
            BusModel::Sg { p_star: 1.0, e_rms: 70.0, r_droop: 0.05 },
            BusModel::Gfm { p_star: 1.0, q_star: 0.0, e_rms: 70.0, m_p: 0.05, m_q: 0.1 },
        ];
        assert!((omega_ss_lossless_from(&buses, W).unwrap() - (W + 0.05)).abs() < 1e-12);
        let gfl = [BusModel::Gfl { p_star: 1.0, q_star: 0.0 }];
        assert_eq!(omega_ss_lossless_from(&gfl, W), Err(SteadyError::NoFrequencyForming));
    }

    #[test]
    fn lossless_solution_matches_closed_form() {
        let case = mixed(0.0);
        let sol = solve_m3(&case).unwrap();
        assert!((sol.omega_ss - omega_ss_lossless(&case).unwrap()).abs() < 1e-10);
        assert_eq!(sol.delta[case.reference], 0.0);
        assert!(sol.p.iter().sum::<f64>().abs() < 1e-8);
    }

    #[test]
    fn solutions_satisfy_independent_residuals() {
        let case = mixed(0.05);
        for sol in [solve_m3(&case).unwrap(), solve_m3prime(&case).unwrap()] {
            let (power, volt) = bus_residual(&case, &sol.e, &sol.p, &sol.q, sol.omega_ss, sol.model).unwrap();
            assert!(power < 1e-8 * case.base_power(), "{power}");
            assert!(volt < 1e-8 * 71.0);
            assert!(sol.network_residual(&case.network, W).max() < 1e-10 * 100.0);
            let kcl = case.network.gather(&sol.f);
            for (a, b) in kcl.iter().zip(&sol.i) {
                assert!((a - b).norm() < 1e-10 * b.norm().max(1.0));
            }
        }
    }

    #[test]
    fn frozen_admittance_changes_the_answer_off_nominal() {
        let case = mixed(0.05);
        let a = solve_m3(&case).unwrap();
        let b = solve_m3prime(&case).unwrap();
        assert!((a.omega_ss - W).abs() > 0.1);
        assert!(voltage_discrepancy(&a, &b).iter().any(|d| *d > 1e-6));
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let case = mixed(0.05);
        let sol = solve_m3(&case).unwrap();
        let n = case.n();
        let mut x = DVector::zeros(4 * n + 1);
        for k in 0..n {
            x[k] = sol.e[k].norm() * 1.01;
            x[n + k] = sol.delta[k] + 0.01;
            x[2 * n + k] = sol.p[k];
            x[3 * n + k] = sol.q[k];
        }
        x[4 * n] = sol.omega_ss + 0.3;
        for model in [PowerFlowModel::M3, PowerFlowModel::M3Prime] {
            let ev = evaluate(&case, model, &x).unwrap();
            for c in 0..x.len() {
                let h = 1e-6 * x[c].abs().max(1e-3);
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += h;
                xm[c] -= h;
                let fd = (evaluate(&case, model, &xp).unwrap().residual - evaluate(&case, model, &xm).unwrap().residual)
                    / (2.0 * h);
                let col = ev.jacobian.column(c);
                let scale = col.amax().max(1e-6);
                assert!((&fd - col).amax() < 1e-6 * scale, "column {c}: {fd} vs {col}");
            }
        }
    }

    #[test]
    fn gfl_only_case_is_rejected() {
        let buses = vec![BusModel::Gfl { p_star: 1.0, q_star: 0.0 }; 2];
        let err = PowerFlowCase::new(path(2, 0.01, 0.01, 0.01, 1e-3), buses, W).unwrap_err();
        assert!(err.to_string().contains("no frequency-forming resource"));
    }

    #[test]
    fn nominal_setpoints_keep_synchronous_frequency() {
        let buses = vec![
            BusModel::Gfm { p_star: 0.0, q_star: 0.0, e_rms: 70.0, m_p: 3e-3, m_q: 0.02 },
            BusModel::Gfm { p_star: 0.0, q_star: 0.0, e_rms: 70.0, m_p: 3e-3, m_q: 0.02 },
        ];
        let case = PowerFlowCase::new(path(2, 0.0, 2e-3, 0.0, 1e-3), buses, W).unwrap();
        let sol = solve_m3(&case).unwrap();
        assert!((sol.omega_ss - W).abs() < 1e-12);
        assert!(sol.delta.iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn classical_structure_without_droop_terms() {
        // a stiff governor pins the frequency; the generator then behaves
        // as a PV bus and the inverter as a PQ bus
        let buses = vec![
            BusModel::Sg { p_star: 0.0, e_rms: 70.0, r_droop: 1e-7 },
            BusModel::Gfl { p_star: -300.0, q_star: -40.0 },
        ];
        let case = PowerFlowCase::new(path(2, 0.05, 2e-3, 0.02, 1e-3), buses, W).unwrap();
        let sol = solve_m3(&case).unwrap();
        assert!((sol.omega_ss - W).abs() < 1e-3);
        assert!((sol.e[0].norm() - 70.0).abs() < 1e-9);
        assert!((sol.p[1] + 300.0).abs() < 1e-6 && (sol.q[1] + 40.0).abs() < 1e-6);
    }
}
