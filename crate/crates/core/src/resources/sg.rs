//! Synchronous generator with one field and two damper windings, an exciter
//! with rate feedback and a first-order governor/prime mover.
//!
//! Stator quantities live in the rotor dq frame at electrical angle
//! `(poles / 2) * theta_r`. Flux linkages are the states; winding currents
//! follow from the constant inductance map. Stator currents inside the flux
//! map use the motor convention (into the machine); the generator current
//! reported to the network is their negative.

use nalgebra::{Matrix2, Matrix5, Vector5};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{check_non_negative, check_positive, check_finite, InterfaceOut, ResourceError};
use crate::frames::{power_from_space, rms_ratio};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgParams {
    /// Stator resistance, ohm.
    pub r: f64,
    pub r_f: f64,
    pub r_1: f64,
    pub r_2: f64,
    pub l_ls: f64,
    pub l_sf: f64,
    pub l_s1: f64,
    pub l_s2: f64,
    pub l_f1: f64,
    pub l_ff: f64,
    pub l_11: f64,
    pub l_22: f64,
    pub l_a: f64,
    pub l_b: f64,
    pub poles: u32,
    /// Rotor inertia, kg m^2.
    pub inertia: f64,
    /// Windage and friction, N m s.
    pub windage: f64,
    pub tau_e: f64,
    pub tau_u: f64,
    pub tau_r: f64,
    pub kappa_e: f64,
    pub kappa_a: f64,
    pub kappa_s: f64,
    pub kappa_c: f64,
    pub tau_m: f64,
    pub tau_s: f64,
    pub kappa_p: f64,
    /// Governor droop, rad/s per W.
    pub r_droop: f64,
    pub p_star: f64,
    /// Space-phasor magnitude setpoint, V.
    pub e_star: f64,
}

impl SgParams {
    pub fn validate(&self) -> Result<(), ResourceError> {
        for (name, x) in [("r", self.r), ("r_f", self.r_f), ("r_1", self.r_1), ("r_2", self.r_2)] {
            check_non_negative(name, x)?;
        }
        for (name, x) in [
            ("l_ls", self.l_ls),
            ("l_sf", self.l_sf),
            ("l_s1", self.l_s1),
            ("l_s2", self.l_s2),
            ("l_f1", self.l_f1),
            ("l_b", self.l_b),
            ("windage", self.windage),
            ("kappa_a", self.kappa_a),
            ("kappa_s", self.kappa_s),
            ("kappa_c", self.kappa_c),
        ] {
            check_non_negative(name, x)?;
        }
        for (name, x) in [
            ("l_ff", self.l_ff),
            ("l_11", self.l_11),
            ("l_22", self.l_22),
            ("inertia", self.inertia),
            ("tau_e", self.tau_e),
            ("tau_u", self.tau_u),
            ("tau_r", self.tau_r),
            ("tau_m", self.tau_m),
            ("tau_s", self.tau_s),
            ("kappa_p", self.kappa_p),
            ("r_droop", self.r_droop),
            ("e_star", self.e_star),
        ] {
            check_positive(name, x)?;
        }
        check_finite("kappa_e", self.kappa_e)?;
        check_finite("p_star", self.p_star)?;
        if !(self.l_a > self.l_b) {
            return Err(ResourceError::InvalidParameter {
                name: "l_a",
                reason: format!("must exceed l_b ({} <= {})", self.l_a, self.l_b),
            });
        }
        if self.poles < 2 || !self.poles.is_multiple_of(2) {
            return Err(ResourceError::InvalidParameter {
                name: "poles",
                reason: format!("must be an even integer >= 2, got {}", self.poles),
            });
        }
        FluxMap::new(self, 0.0, 0.0).map(|_| ())
    }

    /// Ratio of electrical to mechanical angle.
    pub fn pole_pairs(&self) -> f64 {
        f64::from(self.poles) / 2.0
    }
}

/// Constant linear map between winding currents `[i_d, i_q, i_f, i_1, i_2]`
/// and flux linkages `[L_d, L_q, l_f, l_1, l_2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxMap {
    m: Matrix5<f64>,
    g: Matrix5<f64>,
    r_stator: f64,
    r_rotor: [f64; 3],
}

impl FluxMap {
    /// Map for the machine with `extra_r`, `extra_l` added in series with
    /// each stator phase.
    pub fn new(p: &SgParams, extra_r: f64, extra_l: f64) -> Result<Self, ResourceError> {
        let l_ls = p.l_ls + extra_l;
        let l_d = l_ls + 1.5 * (p.l_a - p.l_b);
        let l_q = l_ls + 1.5 * (p.l_a + p.l_b);
        #[rustfmt::skip]
        let m = Matrix5::new(
            l_d,     0.0,            0.0,            0.0,            1.5 * p.l_s2,
            0.0,     l_q,            -1.5 * p.l_sf,  -1.5 * p.l_s1,  0.0,
            0.0,     -p.l_sf,        p.l_ff,         p.l_f1,         0.0,
            0.0,     -p.l_s1,        p.l_f1,         p.l_11,         0.0,
            p.l_s2,  0.0,            0.0,            0.0,            p.l_22,
        );
        let g = m.try_inverse().ok_or(ResourceError::SingularFluxMap)?;
        if !g.iter().all(|x| x.is_finite()) {
            return Err(ResourceError::SingularFluxMap);
        }
        Ok(Self { m, g, r_stator: p.r + extra_r, r_rotor: [p.r_f, p.r_1, p.r_2] })
    }

    pub fn inductance(&self) -> &Matrix5<f64> {
        &self.m
    }

    pub fn currents(&self, flux: &Vector5<f64>) -> Vector5<f64> {
        self.g * flux
    }

    pub fn fluxes(&self, currents: &Vector5<f64>) -> Vector5<f64> {
        self.m * currents
    }

    /// Stator-to-stator block of the inverse map.
    pub fn stator_block(&self) -> Matrix2<f64> {
        self.g.fixed_view::<2, 2>(0, 0).into_owned()
    }

    pub fn inverse(&self) -> &Matrix5<f64> {
        &self.g
    }

    pub fn r_stator(&self) -> f64 {
        self.r_stator
    }

    pub fn l_d(&self) -> f64 {
        self.m[(0, 0)]
    }

    pub fn l_q(&self) -> f64 {
        self.m[(1, 1)]
    }

    /// Flux-linkage derivatives with the stator terminal voltage omitted;
    /// the terminal voltage enters `d[L_d, L_q]` with unit gain.
    pub fn flux_rates_unforced(&self, flux: &Vector5<f64>, c: &Vector5<f64>, omega: f64, e_f: f64) -> Vector5<f64> {
        Vector5::new(
            -self.r_stator * c[0] + omega * flux[1],
            -self.r_stator * c[1] - omega * flux[0],
            -self.r_rotor[0] * c[2] + e_f,
            -self.r_rotor[1] * c[3],
            -self.r_rotor[2] * c[4],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SgState {
    /// Stator flux linkage in the rotor frame, Wb.
    pub flux: Complex64,
    pub lambda_f: f64,
    pub lambda_1: f64,
    pub lambda_2: f64,
    /// Mechanical rotor angle, rad.
    pub theta_r: f64,
    /// Electrical frequency, rad/s.
    pub omega: f64,
    pub e_f: f64,
    pub u_f: f64,
    pub u_r: f64,
    pub t_m: f64,
    pub rho_v: f64,
}

pub const SG_STATE_NAMES: [&str; 12] = [
    "flux_d", "flux_q", "lambda_f", "lambda_1", "lambda_2", "theta_r", "omega", "e_f", "u_f", "u_r", "t_m", "rho_v",
];

impl SgState {
    pub const LEN: usize = 12;

    pub fn to_array(&self) -> [f64; 12] {
        [
            self.flux.re,
            self.flux.im,
            self.lambda_f,
            self.lambda_1,
            self.lambda_2,
            self.theta_r,
            self.omega,
            self.e_f,
            self.u_f,
            self.u_r,
            self.t_m,
            self.rho_v,
        ]
    }

    pub fn from_slice(x: &[f64]) -> Result<Self, ResourceError> {
        super::check_len(x, Self::LEN)?;
        Ok(Self {
            flux: Complex64::new(x[0], x[1]),
            lambda_f: x[2],
            lambda_1: x[3],
            lambda_2: x[4],
            theta_r: x[5],
            omega: x[6],
            e_f: x[7],
            u_f: x[8],
            u_r: x[9],
            t_m: x[10],
            rho_v: x[11],
        })
    }

    pub fn flux_vector(&self) -> Vector5<f64> {
        Vector5::new(self.flux.re, self.flux.im, self.lambda_f, self.lambda_1, self.lambda_2)
    }

    /// Electrical frame angle.
    pub fn theta(&self, p: &SgParams) -> f64 {
        p.pole_pairs() * self.theta_r
    }
}

/// Terminal measurements fed back to the voltage regulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgFeedback {
    pub q: f64,
    pub e_mag: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgRates {
    pub d: SgState,
    /// Stator current delivered to the network, local frame.
    pub i_gen: Complex64,
    pub t_e: f64,
    pub out: InterfaceOut,
}

/// Electrical torque for stator flux `flux` and generator current `i_gen`.
pub fn electrical_torque(p: &SgParams, flux: Complex64, i_gen: Complex64) -> f64 {
    (2.0 / 3.0) * p.pole_pairs() * (flux.re * i_gen.im - flux.im * i_gen.re)
}

/// Generator current in the local frame.
pub fn generator_current(map: &FluxMap, s: &SgState) -> Complex64 {
    let c = map.currents(&s.flux_vector());
    -Complex64::new(c[0], c[1])
}

/// State derivatives for terminal voltage `e_term` (local frame), using the
/// machine's own inductance map.
pub fn sg_rhs(
    p: &SgParams,
    s: &SgState,
    e_term: Complex64,
    fb: SgFeedback,
    omega_s: f64,
) -> Result<SgRates, ResourceError> {
    let map = FluxMap::new(p, 0.0, 0.0)?;
    Ok(sg_rhs_with(p, &map, s, e_term, fb, omega_s))
}

/// [`sg_rhs`] with a precomputed (possibly interface-augmented) flux map.
pub fn sg_rhs_with(
    p: &SgParams,
    map: &FluxMap,
    s: &SgState,
    e_term: Complex64,
    fb: SgFeedback,
    omega_s: f64,
) -> SgRates {
    let flux = s.flux_vector();
    let c = map.currents(&flux);
    let mut dflux = map.flux_rates_unforced(&flux, &c, s.omega, s.e_f);
    dflux[0] += e_term.re;
    dflux[1] += e_term.im;
    let i_gen = -Complex64::new(c[0], c[1]);
    let t_e = electrical_torque(p, s.flux, i_gen);
    let mech = 1.0 / p.pole_pairs();
    let d_omega = (s.t_m - t_e - p.windage * mech * s.omega) / (p.inertia * mech);

    let compensation = if p.kappa_c == 0.0 { 0.0 } else { 1.5 * p.kappa_c * fb.q / fb.e_mag };
    let d_e_f = (-p.kappa_e * s.e_f + s.u_f) / p.tau_e;
    let d_u_f = (-s.u_f + p.kappa_a * s.u_r - p.kappa_a * p.kappa_s / p.tau_r * s.e_f
        + p.kappa_a * (p.e_star - fb.e_mag - compensation))
        / p.tau_u;
    let d_u_r = (-s.u_r + p.kappa_s / p.tau_r * s.e_f) / p.tau_r;
    let d_t_m = (-s.t_m + p.kappa_p * s.rho_v) / p.tau_m;
    let d_rho_v = (-s.rho_v + p.p_star / (p.kappa_p * omega_s) - (s.omega - omega_s) / (p.r_droop * omega_s))
        / p.tau_s;

    SgRates {
        d: SgState {
            flux: Complex64::new(dflux[0], dflux[1]),
            lambda_f: dflux[2],
            lambda_1: dflux[3],
            lambda_2: dflux[4],
            theta_r: mech * s.omega,
            omega: d_omega,
            e_f: d_e_f,
            u_f: d_u_f,
            u_r: d_u_r,
            t_m: d_t_m,
            rho_v: d_rho_v,
        },
        i_gen,
        t_e,
        out: InterfaceOut { e_mag: e_term.norm(), delta: e_term.arg(), omega: s.omega, theta: s.theta(p) },
    }
}

/// Regulator feedback from the terminal voltage and generator current.
pub fn terminal_feedback(e_term: Complex64, i_gen: Complex64) -> SgFeedback {
    SgFeedback { q: power_from_space(e_term, i_gen).im, e_mag: e_term.norm() }
}

/// Magnetic plus rotational kinetic energy.
pub fn stored_energy(p: &SgParams, map: &FluxMap, s: &SgState) -> f64 {
    let c = map.currents(&s.flux_vector());
    let d = Vector5::new(2.0 / 3.0, 2.0 / 3.0, 1.0, 1.0, 1.0);
    let magnetic = 0.5 * c.component_mul(&d).dot(&(map.inductance() * c));
    let w_mech = s.omega / p.pole_pairs();
    magnetic + 0.5 * p.inertia * w_mech * w_mech
}

/// No-load equilibrium at the synchronous frequency with the regulator at
/// rest and the governor at its setpoint.
pub fn sg_flat_start(p: &SgParams, map: &FluxMap, omega_s: f64) -> SgState {
    let l_sf = -map.inductance()[(2, 1)];
    let i_f = if p.kappa_a > 0.0 {
        p.e_star / (1.5 * omega_s * l_sf + p.kappa_e * p.r_f / p.kappa_a)
    } else {
        0.0
    };
    let flux = map.fluxes(&Vector5::new(0.0, 0.0, i_f, 0.0, 0.0));
    let e_f = p.r_f * i_f;
    let rho_v = p.p_star / (p.kappa_p * omega_s);
    SgState {
        flux: Complex64::new(flux[0], flux[1]),
        lambda_f: flux[2],
        lambda_1: flux[3],
        lambda_2: flux[4],
        theta_r: 0.0,
        omega: omega_s,
        e_f,
        u_f: p.kappa_e * e_f,
        u_r: p.kappa_s * e_f / p.tau_r,
        t_m: p.kappa_p * rho_v,
        rho_v,
    }
}

/// Electrical steady state that delivers `i_gen` at terminal voltage `e` (a
/// common frame at time zero) and frequency `omega`, with the regulator and
/// the rotor in equilibrium. Returns the state and the rotor frame angle.
///
/// The voltage setpoint and governor setpoint are not adjusted, so those two
/// integrators are at rest only if the setpoints happen to agree.
pub fn sg_equilibrium(p: &SgParams, map: &FluxMap, e: Complex64, i_gen: Complex64, omega: f64) -> (SgState, f64) {
    let (l_d, l_q) = (map.l_d(), map.l_q());
    let l_sf = -map.inductance()[(2, 1)];
    let w = e + Complex64::new(map.r_stator(), omega * l_d) * i_gen;
    let angle = w.arg();
    let i_m = -i_gen * Complex64::from_polar(1.0, -angle);
    let i_f = (w.norm() + omega * (l_q - l_d) * i_m.im) / (1.5 * omega * l_sf);
    let flux = map.fluxes(&Vector5::new(i_m.re, i_m.im, i_f, 0.0, 0.0));
    let flux_dq = Complex64::new(flux[0], flux[1]);
    let t_e = electrical_torque(p, flux_dq, -i_m);
    let t_m = t_e + p.windage * omega / p.pole_pairs();
    let e_f = p.r_f * i_f;
    (
        SgState {
            flux: flux_dq,
            lambda_f: flux[2],
            lambda_1: flux[3],
            lambda_2: flux[4],
            theta_r: angle / p.pole_pairs(),
            omega,
            e_f,
            u_f: p.kappa_e * e_f,
            u_r: p.kappa_s * e_f / p.tau_r,
            t_m,
            rho_v: t_m / p.kappa_p,
        },
        angle,
    )
}

/// Steady-state bus model: droop active power and the RMS voltage setpoint.
pub fn sg_steady(p: &SgParams, omega_ss: f64, omega_s: f64) -> (f64, f64) {
    (p.p_star - (omega_ss - omega_s) / p.r_droop, rms_ratio::<f64>() * p.e_star)
}

/// Local-frame derivative of the generator current, split into a part
/// independent of the terminal voltage and the gain applied to it.
pub(crate) fn current_rate_affine(map: &FluxMap, s: &SgState) -> (Complex64, Matrix2<f64>) {
    let flux = s.flux_vector();
    let c = map.currents(&flux);
    let dflux = map.flux_rates_unforced(&flux, &c, s.omega, s.e_f);
    let dc = map.inverse() * dflux;
    (-Complex64::new(dc[0], dc[1]), -map.stator_block())
}
