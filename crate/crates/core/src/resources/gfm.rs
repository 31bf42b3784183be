//! Generic grid-forming inverter covering droop, virtual synchronous machine
//! and dispatchable virtual oscillator control through parameter choices.
//!
//! The terminal voltage sits on the local d axis (`delta' = 0`); the
//! controller sets its magnitude and the frame frequency. A zero time
//! constant turns the corresponding loop algebraic.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{
    check_finite, check_len, check_non_negative, check_positive, InterfaceOut, LocalSignals, ResourceError,
    SourceModel,
};
use crate::frames::{power_from_space, rms_ratio};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GfmFlavor {
    Droop,
    Vsm,
    Dvoc,
}

impl GfmFlavor {
    pub fn name(self) -> &'static str {
        match self {
            GfmFlavor::Droop => "droop",
            GfmFlavor::Vsm => "vsm",
            GfmFlavor::Dvoc => "dvoc",
        }
    }
}

/// Loop gain, possibly scaled by the terminal-voltage magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gain {
    Constant(f64),
    /// `k / |E'|^2`
    OverMagnitudeSquared(f64),
    /// `k / |E'|`
    OverMagnitude(f64),
}

impl Gain {
    pub fn eval(&self, e_mag: f64) -> Result<f64, ResourceError> {
        match *self {
            Gain::Constant(k) => Ok(k),
            _ if !(e_mag > 0.0) => Err(ResourceError::VoltageMagnitude(e_mag)),
            Gain::OverMagnitudeSquared(k) => Ok(k / (e_mag * e_mag)),
            Gain::OverMagnitude(k) => Ok(k / e_mag),
        }
    }
}

/// Voltage-difference metric driving the magnitude loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VoltageLaw {
    /// `|E*| - |E'|`
    Linear,
    /// `k2 |E'| (|E*|^2 - |E'|^2)`
    Cubic { k2: f64 },
}

impl VoltageLaw {
    pub fn eval(&self, e_mag: f64, e_star: f64) -> f64 {
        match *self {
            VoltageLaw::Linear => e_star - e_mag,
            VoltageLaw::Cubic { k2 } => k2 * e_mag * (e_star * e_star - e_mag * e_mag),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GfmParams {
    pub flavor: GfmFlavor,
    /// Frequency-loop time constant, s.
    pub tau_f: f64,
    /// Magnitude-loop time constant, s.
    pub tau_e: f64,
    /// Power-measurement filter time constant, s.
    pub tau_p: f64,
    pub kappa_f: Gain,
    pub kappa_e: Gain,
    pub kappa_d: f64,
    pub voltage_law: VoltageLaw,
    /// Steady-state frequency droop, rad/s per W.
    pub m_p: f64,
    /// Steady-state voltage droop on the space-phasor magnitude, V per var.
    pub m_q: f64,
    /// Virtual inertia (VSM only).
    pub inertia: f64,
    /// Virtual damping (VSM only).
    pub damping: f64,
    pub k_p_pll: f64,
    pub k_i_pll: f64,
    pub p_star: f64,
    pub q_star: f64,
    /// Space-phasor magnitude setpoint, V.
    pub e_star: f64,
}

impl GfmParams {
    pub fn droop(m_p: f64, m_q: f64, tau_p: f64, p_star: f64, q_star: f64, e_star: f64) -> Self {
        Self {
            flavor: GfmFlavor::Droop,
            tau_f: 0.0,
            tau_e: 0.0,
            tau_p,
            kappa_f: Gain::Constant(m_p),
            kappa_e: Gain::Constant(m_q),
            kappa_d: 0.0,
            voltage_law: VoltageLaw::Linear,
            m_p,
            m_q,
            inertia: 0.0,
            damping: 0.0,
            k_p_pll: 0.0,
            k_i_pll: 0.0,
            p_star,
            q_star,
            e_star,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn vsm(
        m_p: f64,
        m_q: f64,
        inertia: f64,
        damping: f64,
        tau_p: f64,
        k_p_pll: f64,
        k_i_pll: f64,
        p_star: f64,
        q_star: f64,
        e_star: f64,
    ) -> Self {
        Self {
            flavor: GfmFlavor::Vsm,
            tau_f: m_p * inertia,
            kappa_d: m_p * damping,
            inertia,
            damping,
            k_p_pll,
            k_i_pll,
            ..Self::droop(m_p, m_q, tau_p, p_star, q_star, e_star)
        }
    }

    /// dVOC; the steady-state droop slopes are the small-signal equivalents
    /// around `|E*|`.
    pub fn dvoc(k1: f64, k2: f64, tau_p: f64, p_star: f64, q_star: f64, e_star: f64) -> Self {
        Self {
            flavor: GfmFlavor::Dvoc,
            tau_f: 0.0,
            tau_e: 1.0,
            tau_p,
            kappa_f: Gain::OverMagnitudeSquared(k1),
            kappa_e: Gain::OverMagnitude(k1),
            kappa_d: 0.0,
            voltage_law: VoltageLaw::Cubic { k2 },
            m_p: k1 / (e_star * e_star),
            m_q: k1 / (2.0 * k2 * e_star.powi(3)),
            inertia: 0.0,
            damping: 0.0,
            k_p_pll: 0.0,
            k_i_pll: 0.0,
            p_star,
            q_star,
            e_star,
        }
    }

    /// RMS-scaled voltage droop used by the steady-state model.
    pub fn m_q_rms(&self) -> f64 {
        rms_ratio::<f64>() * self.m_q
    }

    pub fn e_star_rms(&self) -> f64 {
        rms_ratio::<f64>() * self.e_star
    }

    pub fn validate(&self) -> Result<(), ResourceError> {
        check_positive("tau_p", self.tau_p)?;
        check_non_negative("tau_f", self.tau_f)?;
        check_non_negative("tau_e", self.tau_e)?;
        check_positive("m_p", self.m_p)?;
        check_positive("m_q", self.m_q)?;
        check_positive("e_star", self.e_star)?;
        check_finite("p_star", self.p_star)?;
        check_finite("q_star", self.q_star)?;
        check_finite("kappa_d", self.kappa_d)?;
        if self.tau_e == 0.0
            && !(matches!(self.kappa_e, Gain::Constant(_)) && self.voltage_law == VoltageLaw::Linear)
        {
            return Err(ResourceError::InvalidParameter {
                name: "tau_e",
                reason: "may be zero only with a constant kappa_e and the linear voltage law".into(),
            });
        }
        self.check_bindings()
    }

    fn check_bindings(&self) -> Result<(), ResourceError> {
        let (expected, ok) = match self.flavor {
            GfmFlavor::Droop => (
                "tau_f = 0, tau_e = 0, kappa_f = m_p, kappa_e = m_q, kappa_d = 0, f_e = |E*| - |E'|",
                self.tau_f == 0.0
                    && self.tau_e == 0.0
                    && self.kappa_f == Gain::Constant(self.m_p)
                    && self.kappa_e == Gain::Constant(self.m_q)
                    && self.kappa_d == 0.0
                    && self.voltage_law == VoltageLaw::Linear,
            ),
            GfmFlavor::Vsm => (
                "tau_f = m_p * inertia, tau_e = 0, kappa_f = m_p, kappa_e = m_q, kappa_d = m_p * damping, f_e = |E*| - |E'|",
                self.inertia > 0.0
                    && approx_eq(self.tau_f, self.m_p * self.inertia)
                    && self.tau_e == 0.0
                    && self.kappa_f == Gain::Constant(self.m_p)
                    && self.kappa_e == Gain::Constant(self.m_q)
                    && approx_eq(self.kappa_d, self.m_p * self.damping)
                    && self.voltage_law == VoltageLaw::Linear,
            ),
            GfmFlavor::Dvoc => {
                let ok = match (self.kappa_f, self.kappa_e, self.voltage_law) {
                    (Gain::OverMagnitudeSquared(a), Gain::OverMagnitude(b), VoltageLaw::Cubic { k2 }) => {
                        a == b && a > 0.0 && k2 > 0.0
                    }
                    _ => false,
                };
                (
                    "tau_f = 0, tau_e = 1, kappa_f = k1/|E'|^2, kappa_e = k1/|E'|, kappa_d = 0, f_e = k2|E'|(|E*|^2 - |E'|^2)",
                    ok && self.tau_f == 0.0 && self.tau_e == 1.0 && self.kappa_d == 0.0,
                )
            }
        };
        if ok {
            return Ok(());
        }
        Err(ResourceError::Binding {
            flavor: self.flavor.name(),
            expected,
            found: format!(
                "tau_f = {}, tau_e = {}, kappa_f = {:?}, kappa_e = {:?}, kappa_d = {}, f_e = {:?}",
                self.tau_f, self.tau_e, self.kappa_f, self.kappa_e, self.kappa_d, self.voltage_law
            ),
        })
    }
}

fn approx_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GfmState {
    /// Voltage magnitude; a state only when `tau_e > 0`.
    pub e_mag: f64,
    /// Frequency; a state only when `tau_f > 0`.
    pub omega: f64,
    pub phi: f64,
    pub s_filt: Complex64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GfmRates {
    pub d_e_mag: f64,
    pub d_omega: f64,
    pub d_phi: f64,
    pub d_s_filt: Complex64,
    pub d_theta: f64,
    pub out: InterfaceOut,
}

/// Terminal-voltage magnitude: the state when the magnitude loop is
/// dynamic, otherwise the algebraic solution of the linear law.
pub fn gfm_e_mag(p: &GfmParams, st: &GfmState) -> Result<f64, ResourceError> {
    let e = if p.tau_e > 0.0 {
        st.e_mag
    } else {
        p.e_star - p.kappa_e.eval(p.e_star)? * (st.s_filt.im - p.q_star)
    };
    if !(e >= 0.0) {
        return Err(ResourceError::VoltageMagnitude(e));
    }
    Ok(e)
}

/// Controller derivatives for measured terminal power `s`.
pub fn gfm_rhs(p: &GfmParams, st: &GfmState, s: Complex64, omega_s: f64) -> Result<GfmRates, ResourceError> {
    let e_mag = gfm_e_mag(p, st)?;
    let kf = p.kappa_f.eval(e_mag)?;
    let d_phi = -e_mag;
    let pll = p.k_p_pll * d_phi + p.k_i_pll * st.phi;
    // droop sign: frequency falls as delivered power exceeds its setpoint
    let target = omega_s - kf * (st.s_filt.re - p.p_star) + p.kappa_d * pll;
    let (omega, d_omega) = if p.tau_f > 0.0 {
        (st.omega, (target - st.omega) / p.tau_f)
    } else {
        (target, 0.0)
    };
    let d_e_mag = if p.tau_e > 0.0 {
        let ke = p.kappa_e.eval(e_mag)?;
        (p.voltage_law.eval(e_mag, p.e_star) - ke * (st.s_filt.im - p.q_star)) / p.tau_e
    } else {
        0.0
    };
    Ok(GfmRates {
        d_e_mag,
        d_omega,
        d_phi,
        d_s_filt: (s - st.s_filt) / p.tau_p,
        d_theta: omega,
        out: InterfaceOut { e_mag, delta: 0.0, omega, theta: st.theta },
    })
}

/// Steady-state bus model `(P, Q)` at frequency `omega_ss` and RMS voltage
/// magnitude `e_rms`.
pub fn gfm_steady(p: &GfmParams, omega_ss: f64, omega_s: f64, e_rms: f64) -> (f64, f64) {
    (
        p.p_star - (omega_ss - omega_s) / p.m_p,
        p.q_star - (e_rms - p.e_star_rms()) / p.m_q_rms(),
    )
}

/// [`GfmParams`] bound to a synchronous frequency, usable in a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gfm {
    pub params: GfmParams,
    pub omega_s: f64,
}

impl Gfm {
    fn dynamic_e(&self) -> bool {
        self.params.tau_e > 0.0
    }

    fn dynamic_omega(&self) -> bool {
        self.params.tau_f > 0.0
    }

    fn state(&self, x: &[f64]) -> GfmState {
        let mut k = 3;
        let mut next = |on: bool, default: f64| {
            if on {
                k += 1;
                x[k - 1]
            } else {
                default
            }
        };
        let e_mag = next(self.dynamic_e(), self.params.e_star);
        let omega = next(self.dynamic_omega(), self.omega_s);
        GfmState { e_mag, omega, phi: x[2], s_filt: Complex64::new(x[0], x[1]), theta: 0.0 }
    }
}

impl SourceModel for Gfm {
    fn kind(&self) -> &'static str {
        "gfm"
    }

    fn state_names(&self) -> Vec<&'static str> {
        let mut names = vec!["p_filt", "q_filt", "pll_phi"];
        if self.dynamic_e() {
            names.push("e_mag");
        }
        if self.dynamic_omega() {
            names.push("omega");
        }
        names
    }

    fn flat_start(&self) -> Vec<f64> {
        let p = &self.params;
        let mut x = vec![p.p_star, p.q_star, 0.0];
        if self.dynamic_e() {
            x.push(p.e_star);
        }
        if self.dynamic_omega() {
            x.push(self.omega_s);
        }
        x
    }

    fn drifting_states(&self) -> Vec<usize> {
        // the PLL integrates the terminal magnitude itself
        vec![2]
    }

    fn emf(&self, x: &[f64], _i: Complex64) -> Result<Complex64, ResourceError> {
        check_len(x, self.state_len())?;
        Ok(Complex64::new(gfm_e_mag(&self.params, &self.state(x))?, 0.0))
    }

    fn rhs(&self, x: &[f64], sig: &LocalSignals, dx: &mut [f64]) -> Result<f64, ResourceError> {
        check_len(x, self.state_len())?;
        let s = power_from_space(sig.e, sig.i);
        let r = gfm_rhs(&self.params, &self.state(x), s, self.omega_s)?;
        dx[0] = r.d_s_filt.re;
        dx[1] = r.d_s_filt.im;
        dx[2] = r.d_phi;
        let mut k = 3;
        if self.dynamic_e() {
            dx[k] = r.d_e_mag;
            k += 1;
        }
        if self.dynamic_omega() {
            dx[k] = r.d_omega;
        }
        Ok(r.out.omega)
    }

    fn steady_start(
        &self,
        e: Complex64,
        i: Complex64,
        _v: Complex64,
        omega_ss: f64,
    ) -> Result<(Vec<f64>, f64), ResourceError> {
        let angle = e.arg();
        let s = power_from_space(e, i);
        let mut x = vec![s.re, s.im, 0.0];
        if self.dynamic_e() {
            x.push(e.norm());
        }
        if self.dynamic_omega() {
            x.push(omega_ss);
        }
        Ok((x, angle))
    }
}
