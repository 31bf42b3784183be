//! Grid-following inverter: synchronous-frame PLL that puts the grid voltage
//! on the q axis, an outer PI power loop producing the current reference and
//! an inner PI current loop producing the terminal voltage.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{check_finite, check_len, check_positive, InterfaceOut, LocalSignals, ResourceError, SourceModel};
use crate::frames::power_from_space;

const J: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GflParams {
    pub k_p_current: f64,
    pub k_i_current: f64,
    pub k_p_pll: f64,
    pub k_i_pll: f64,
    pub k_p_power: f64,
    pub k_i_power: f64,
    /// Power setpoint, W + j var.
    pub s_star: Complex64,
}

impl GflParams {
    pub fn validate(&self) -> Result<(), ResourceError> {
        check_positive("k_i_current", self.k_i_current)?;
        check_positive("k_i_pll", self.k_i_pll)?;
        check_positive("k_i_power", self.k_i_power)?;
        check_finite("k_p_current", self.k_p_current)?;
        check_finite("k_p_pll", self.k_p_pll)?;
        check_finite("k_p_power", self.k_p_power)?;
        check_finite("p_star", self.s_star.re)?;
        check_finite("q_star", self.s_star.im)
    }

    /// Current reference from the power-loop output `z`. With the grid
    /// voltage on the q axis the power delivered is proportional to
    /// `conj(-j i)`, so the output is rotated and conjugated to make the
    /// integrator drive `S` toward `S*`.
    fn current_reference(&self, z: Complex64) -> Complex64 {
        J * z.conj()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GflState {
    pub phi: f64,
    pub gamma_i: Complex64,
    pub gamma_s: Complex64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GflRates {
    pub d_phi: f64,
    pub d_gamma_i: Complex64,
    pub d_gamma_s: Complex64,
    pub d_theta: f64,
    pub i_ref: Complex64,
    pub out: InterfaceOut,
}

/// Controller derivatives for measured grid voltage `v`, current `i` and
/// power `s`, all in the local frame.
pub fn gfl_rhs(
    p: &GflParams,
    st: &GflState,
    v: Complex64,
    i: Complex64,
    s: Complex64,
    omega_s: f64,
) -> GflRates {
    let d_phi = -v.re;
    let omega = omega_s + p.k_p_pll * d_phi + p.k_i_pll * st.phi;
    let d_gamma_s = p.s_star - s;
    let i_ref = p.current_reference(d_gamma_s * p.k_p_power + st.gamma_s * p.k_i_power);
    let d_gamma_i = i_ref - i;
    let e = d_gamma_i * p.k_p_current + st.gamma_i * p.k_i_current;
    GflRates {
        d_phi,
        d_gamma_i,
        d_gamma_s,
        d_theta: omega,
        i_ref,
        out: InterfaceOut { e_mag: e.norm(), delta: e.arg(), omega, theta: st.theta },
    }
}

/// Terminal voltage consistent with power measured at the terminal,
/// `S = (2/3) E conj(I)`.
///
/// The loop `E = c0 + d conj(E)` is linear in `(E, conj E)` and solved in
/// closed form.
pub fn gfl_emf(p: &GflParams, st: &GflState, i: Complex64) -> Result<Complex64, ResourceError> {
    let a = J * (p.s_star * p.k_p_power + st.gamma_s * p.k_i_power).conj();
    let c0 = (a - i) * p.k_p_current + st.gamma_i * p.k_i_current;
    let d = -J * p.k_p_current * p.k_p_power * (2.0 / 3.0) * i;
    let gain = d.norm_sqr();
    if gain >= 1.0 {
        return Err(ResourceError::LoopGain(gain.sqrt()));
    }
    Ok((c0 + d * c0.conj()) / (1.0 - gain))
}

/// Steady-state bus model: `(P, Q) = (P*, Q*)` and the terminal phasor that
/// delivers it at RMS current `i_rms`.
pub fn gfl_steady(p: &GflParams, i_rms: Complex64) -> Result<(f64, f64, Complex64), ResourceError> {
    if i_rms.norm() == 0.0 {
        return Err(ResourceError::ZeroCurrent);
    }
    Ok((p.s_star.re, p.s_star.im, p.s_star / (3.0 * i_rms.conj())))
}

/// [`GflParams`] bound to a synchronous frequency, usable in a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gfl {
    pub params: GflParams,
    pub omega_s: f64,
}

impl Gfl {
    fn state(x: &[f64]) -> GflState {
        GflState {
            phi: x[0],
            gamma_i: Complex64::new(x[1], x[2]),
            gamma_s: Complex64::new(x[3], x[4]),
            theta: 0.0,
        }
    }
}

impl SourceModel for Gfl {
    fn kind(&self) -> &'static str {
        "gfl"
    }

    fn state_names(&self) -> Vec<&'static str> {
        vec!["pll_phi", "gamma_i_d", "gamma_i_q", "gamma_s_p", "gamma_s_q"]
    }

    fn flat_start(&self) -> Vec<f64> {
        vec![0.0; 5]
    }

    fn emf(&self, x: &[f64], i: Complex64) -> Result<Complex64, ResourceError> {
        check_len(x, 5)?;
        gfl_emf(&self.params, &Self::state(x), i)
    }

    fn rhs(&self, x: &[f64], sig: &LocalSignals, dx: &mut [f64]) -> Result<f64, ResourceError> {
        check_len(x, 5)?;
        let s = power_from_space(sig.e, sig.i);
        let r = gfl_rhs(&self.params, &Self::state(x), sig.v, sig.i, s, self.omega_s);
        dx[0] = r.d_phi;
        dx[1] = r.d_gamma_i.re;
        dx[2] = r.d_gamma_i.im;
        dx[3] = r.d_gamma_s.re;
        dx[4] = r.d_gamma_s.im;
        Ok(r.out.omega)
    }

    fn steady_start(
        &self,
        e: Complex64,
        i: Complex64,
        v: Complex64,
        omega_ss: f64,
    ) -> Result<(Vec<f64>, f64), ResourceError> {
        let p = &self.params;
        // frame that puts v on the positive q axis
        let angle = v.arg() - std::f64::consts::FRAC_PI_2;
        let rot = Complex64::from_polar(1.0, -angle);
        let (e, i) = (e * rot, i * rot);
        let phi = (omega_ss - self.omega_s) / p.k_i_pll;
        let gamma_i = e / p.k_i_current;
        let gamma_s = J * i.conj() / p.k_i_power;
        Ok((vec![phi, gamma_i.re, gamma_i.im, gamma_s.re, gamma_s.im], angle))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::power_rms;
    use crate::frames::RmsPhasor;

    const W: f64 = 376.99111843077515;

    fn params() -> GflParams {
        GflParams {
            k_p_current: 1.0,
            k_i_current: 50.0,
            k_p_pll: 0.5,
            k_i_pll: 16.0,
            k_p_power: 1e-3,
            k_i_power: 0.1,
            s_star: Complex64::new(300.0, -50.0),
        }
    }

    #[test]
    fn locked_pll_runs_at_synchronous_frequency() {
        let r = gfl_rhs(&params(), &GflState::default(), Complex64::new(0.0, 150.0), Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), W);
        assert_eq!(r.out.omega, W);
        assert_eq!(r.d_phi, 0.0);
    }

    #[test]
    fn tracking_equilibrium() {
        let p = params();
        let i = Complex64::new(0.3, 1.2);
        let st = GflState {
            phi: 0.0,
            gamma_i: Complex64::new(3.0, 140.0) / p.k_i_current,
            gamma_s: J * i.conj() / p.k_i_power,
            theta: 0.0,
        };
        let r = gfl_rhs(&p, &st, Complex64::new(0.0, 150.0), i, p.s_star, W);
        assert!(r.d_gamma_s.norm() == 0.0);
        assert!(r.d_gamma_i.norm() < 1e-12);
        assert!((r.i_ref - i).norm() < 1e-12);
    }

    #[test]
    fn pll_realigns_against_positive_d_voltage() {
        let p = params();
        let r = gfl_rhs(&p, &GflState::default(), Complex64::new(5.0, 150.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), W);
        assert!(r.d_phi < 0.0);
        assert!(r.out.omega < W);
    }

    #[test]
    fn emf_closes_the_power_loop() {
        let p = params();
        let st = GflState {
            phi: 0.1,
            gamma_i: Complex64::new(0.2, 2.9),
            gamma_s: Complex64::new(11.0, -4.0),
            theta: 0.0,
        };
        let i = Complex64::new(1.3, -0.4);
        let e = gfl_emf(&p, &st, i).unwrap();
        let s = power_from_space(e, i);
        let r = gfl_rhs(&p, &st, Complex64::new(0.0, 100.0), i, s, W);
        assert!((r.out.emf_local() - e).norm() < 1e-12 * e.norm());
    }

    #[test]
    fn power_reference_drives_power_toward_setpoint() {
        // With v on the q axis and a stiff current loop, S follows the power
        // integrator with a positive real gain.
        let p = params();
        let v = Complex64::new(0.0, 150.0);
        let mut gamma_s = Complex64::new(0.0, 0.0);
        let h = 1e-3;
        for _ in 0..20_000 {
            let s = power_from_space(v, i_of(&p, gamma_s, v));
            gamma_s += (p.s_star - s) * h;
        }
        let s = power_from_space(v, i_of(&p, gamma_s, v));
        assert!((s - p.s_star).norm() < 1e-6 * p.s_star.norm());
    }

    fn i_of(p: &GflParams, gamma_s: Complex64, v: Complex64) -> Complex64 {
        // fixed point of i = ref(kp (S* - S(i)) + ki gamma_s)
        let mut i = Complex64::new(0.0, 0.0);
        for _ in 0..200 {
            i = p.current_reference((p.s_star - power_from_space(v, i)) * p.k_p_power + gamma_s * p.k_i_power);
        }
        i
    }

    #[test]
    fn steady_examples() {
        let mut p = params();
        p.s_star = Complex64::new(300.0, 0.0);
        let (_, _, e) = gfl_steady(&p, Complex64::new(1.0, 0.0)).unwrap();
        assert!((e - Complex64::new(100.0, 0.0)).norm() < 1e-12);
        assert_eq!(e.im, 0.0);
        p.s_star = Complex64::new(0.0, 300.0);
        let i = Complex64::new(0.0, 1.0);
        let (pp, q, e) = gfl_steady(&p, i).unwrap();
        assert_eq!((pp, q), (0.0, 300.0));
        let s = power_rms(&RmsPhasor(e), &RmsPhasor(i));
        assert!((s.s - p.s_star).norm() < 1e-12);
        assert_eq!(gfl_steady(&p, Complex64::new(0.0, 0.0)), Err(ResourceError::ZeroCurrent));
    }

    #[test]
    fn steady_start_is_equilibrium() {
        let g = Gfl { params: params(), omega_s: W };
        let v = Complex64::new(80.0, 120.0);
        let i = Complex64::new(1.0, -0.7);
        let e = v + Complex64::new(0.02, W * 1e-3) * i;
        let w_ss = W - 0.05;
        let (_, angle) = g.steady_start(e, i, v, w_ss).unwrap();
        let rot = Complex64::from_polar(1.0, -angle);
        assert!(((v * rot).arg() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        // the start assumes S = S*, i.e. the current was produced by this setpoint
        let mut g2 = g.clone();
        g2.params.s_star = power_from_space(e, i);
        let (x2, _) = g2.steady_start(e, i, v, w_ss).unwrap();
        let e2 = g2.emf(&x2, i * rot).unwrap();
        assert!((e2 - e * rot).norm() < 1e-9 * e.norm());
        let mut dx = vec![0.0; 5];
        let w = g2.rhs(&x2, &LocalSignals { v: v * rot, i: i * rot, e: e2 }, &mut dx).unwrap();
        assert!((w - w_ss).abs() < 1e-9);
        assert!(dx.iter().all(|d| d.abs() < 1e-9 * 200.0), "{dx:?}");
    }
}
