//! Balanced three-phase signals and their complex representations.
//!
//! A balanced triple `(a, b, c)` maps to a space phasor; the space phasor maps
//! to a sample in either the global DQ frame (rotating at the synchronous
//! frequency) or a resource-local dq frame (rotating with a caller-supplied
//! angle). Steady-state sinusoids additionally map to RMS phasors.
//!
//! Everything here is generic over the scalar so the same code serves `f32`
//! and `f64`; crate-root aliases fix the scalar to `f64`.

use num_complex::Complex;
use num_traits::{Float, FloatConst};
use thiserror::Error;

/// Scalar bound used throughout this module.
pub trait Scalar: Float + FloatConst + std::fmt::Debug {}
impl<T: Float + FloatConst + std::fmt::Debug> Scalar for T {}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("signal is not balanced: a + b + c = {sum:e} exceeds tolerance {tol:e}")]
    Unbalanced { sum: f64, tol: f64 },
    #[error("samples are expressed in different reference frames")]
    FrameMismatch,
}

fn lit<T: Scalar>(x: f64) -> T {
    T::from(x).expect("constant representable in scalar type")
}

fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Relative tolerance for the zero-sum check: 1e-9, or a few ulps for
/// scalars too coarse to resolve that.
pub fn balance_tolerance<T: Scalar>() -> T {
    lit::<T>(1e-9).max(T::epsilon() * lit(64.0))
}

/// Instantaneous phase values of a three-phase quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreePhase<T> {
    pub a: T,
    pub b: T,
    pub c: T,
}

impl<T: Scalar> ThreePhase<T> {
    pub fn new(a: T, b: T, c: T) -> Self {
        Self { a, b, c }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn max_abs(&self) -> T {
        self.a.abs().max(self.b.abs()).max(self.c.abs())
    }

    /// Errors when `|a + b + c|` exceeds the balance tolerance scaled by
    /// `max(1, max|x|)`.
    pub fn check_balanced(&self) -> Result<(), FrameError> {
        let sum = self.a + self.b + self.c;
        let tol = balance_tolerance::<T>() * T::one().max(self.max_abs());
        if sum.abs() > tol || sum.is_nan() {
            return Err(FrameError::Unbalanced {
                sum: to_f64(sum),
                tol: to_f64(tol),
            });
        }
        Ok(())
    }

    pub fn dot(&self, other: &Self) -> T {
        self.a * other.a + self.b * other.b + self.c * other.c
    }

    pub fn as_array(&self) -> [T; 3] {
        [self.a, self.b, self.c]
    }
}

/// Complex representation of a balanced triple in the stationary frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpacePhasor<T>(pub Complex<T>);

/// Rotating frame a sample is expressed in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Frame<T> {
    /// Rotates at the synchronous frequency, angle `omega_s * t`.
    GlobalDq,
    /// Rotates with a resource's own angle `theta(t)`, the integral of its
    /// frequency, kept unwrapped.
    LocalDq { theta: T },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSample<T> {
    pub value: Complex<T>,
    pub frame: Frame<T>,
}

/// Steady-state phasor whose magnitude is the RMS value of each phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsPhasor<T>(pub Complex<T>);

/// Instantaneous active, reactive and complex power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerTriple<T> {
    pub p: T,
    pub q: T,
    pub s: Complex<T>,
}

impl<T: Scalar> PowerTriple<T> {
    pub fn from_complex(s: Complex<T>) -> Self {
        Self { p: s.re, q: s.im, s }
    }
}

/// `sqrt(2) / 3`: ratio between an RMS phasor and the space-phasor
/// magnitude of the same sinusoid.
pub fn rms_ratio<T: Scalar>() -> T {
    T::SQRT_2() / lit(3.0)
}

fn half_sqrt3<T: Scalar>() -> T {
    lit::<T>(3.0).sqrt() / lit(2.0)
}

pub fn abc_to_space<T: Scalar>(x: &ThreePhase<T>) -> Result<SpacePhasor<T>, FrameError> {
    x.check_balanced()?;
    Ok(abc_to_space_unchecked(x))
}

/// Space phasor of a triple without the balance check. Any zero-sequence
/// content is discarded.
pub fn abc_to_space_unchecked<T: Scalar>(x: &ThreePhase<T>) -> SpacePhasor<T> {
    let half = lit::<T>(0.5);
    let re = x.a - half * x.b - half * x.c;
    let im = half_sqrt3::<T>() * (x.b - x.c);
    SpacePhasor(Complex::new(re, im))
}

pub fn space_to_abc<T: Scalar>(xs: &SpacePhasor<T>) -> ThreePhase<T> {
    let two_thirds = lit::<T>(2.0 / 3.0);
    let half = lit::<T>(0.5);
    let (re, im) = (xs.0.re, xs.0.im);
    let h = half_sqrt3::<T>();
    ThreePhase::new(
        two_thirds * re,
        two_thirds * (-half * re + h * im),
        two_thirds * (-half * re - h * im),
    )
}

/// Angle of the frame at time `t`.
pub fn frame_angle<T: Scalar>(frame: &Frame<T>, t: T, omega_s: T) -> T {
    match frame {
        Frame::GlobalDq => omega_s * t,
        Frame::LocalDq { theta } => *theta,
    }
}

pub fn space_to_frame<T: Scalar>(
    xs: &SpacePhasor<T>,
    frame: Frame<T>,
    t: T,
    omega_s: T,
) -> FrameSample<T> {
    let angle = frame_angle(&frame, t, omega_s);
    FrameSample {
        value: xs.0 * Complex::from_polar(T::one(), -angle),
        frame,
    }
}

pub fn frame_to_space<T: Scalar>(x: &FrameSample<T>, t: T, omega_s: T) -> SpacePhasor<T> {
    let angle = frame_angle(&x.frame, t, omega_s);
    SpacePhasor(x.value * Complex::from_polar(T::one(), angle))
}

/// Phase offset `theta(t) - omega_ss * t` of a local frame; constant once the
/// frame turns at the steady-state frequency.
pub fn steady_phase_offset<T: Scalar>(theta: T, t: T, omega_ss: T) -> T {
    theta - omega_ss * t
}

/// RMS phasor of a sample taken at time `t` of a sinusoidal steady state at
/// `omega_ss`.
pub fn frame_to_rms_phasor<T: Scalar>(
    x: &FrameSample<T>,
    t: T,
    omega_s: T,
    omega_ss: T,
) -> RmsPhasor<T> {
    let phase = match x.frame {
        Frame::GlobalDq => (omega_s - omega_ss) * t,
        Frame::LocalDq { theta } => steady_phase_offset(theta, t, omega_ss),
    };
    RmsPhasor(x.value * Complex::from_polar(rms_ratio::<T>(), phase))
}

/// Phase values of a source specified by magnitude and angle in its local
/// frame at angle `theta`.
pub fn dq_to_abc_source<T: Scalar>(e_mag: T, delta: T, theta: T) -> ThreePhase<T> {
    let k = lit::<T>(2.0 / 3.0) * e_mag;
    let shift = lit::<T>(2.0) * T::FRAC_PI_3();
    let arg = theta + delta;
    ThreePhase::new(
        k * arg.cos(),
        k * (arg - shift).cos(),
        k * (arg + shift).cos(),
    )
}

pub fn power_abc<T: Scalar>(
    v: &ThreePhase<T>,
    i: &ThreePhase<T>,
) -> Result<PowerTriple<T>, FrameError> {
    v.check_balanced()?;
    i.check_balanced()?;
    let p = v.dot(i);
    // q = v' G' Y G i with Y = (2/3) [[0, -1], [1, 0]]
    let vs = abc_to_space_unchecked(v).0;
    let is = abc_to_space_unchecked(i).0;
    let q = lit::<T>(2.0 / 3.0) * (vs.im * is.re - vs.re * is.im);
    Ok(PowerTriple {
        p,
        q,
        s: Complex::new(p, q),
    })
}

fn same_frame<T: Scalar>(a: &Frame<T>, b: &Frame<T>) -> bool {
    match (a, b) {
        (Frame::GlobalDq, Frame::GlobalDq) => true,
        (Frame::LocalDq { theta: x }, Frame::LocalDq { theta: y }) => {
            (*x - *y).abs() <= T::epsilon() * lit(16.0) * T::one().max(x.abs())
        }
        _ => false,
    }
}

pub fn power_frame<T: Scalar>(
    v: &FrameSample<T>,
    i: &FrameSample<T>,
) -> Result<PowerTriple<T>, FrameError> {
    if !same_frame(&v.frame, &i.frame) {
        return Err(FrameError::FrameMismatch);
    }
    Ok(PowerTriple::from_complex(power_from_space(v.value, i.value)))
}

/// `(2/3) v conj(i)` for any pair of space-phasor-scaled quantities in a
/// common frame.
pub fn power_from_space<T: Scalar>(v: Complex<T>, i: Complex<T>) -> Complex<T> {
    v * i.conj() * lit::<T>(2.0 / 3.0)
}

pub fn power_rms<T: Scalar>(v: &RmsPhasor<T>, i: &RmsPhasor<T>) -> PowerTriple<T> {
    PowerTriple::from_complex(v.0 * i.0.conj() * lit::<T>(3.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const W: f64 = 2.0 * std::f64::consts::PI * 60.0;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn cos_triple(amp: f64, phase: f64) -> ThreePhase<f64> {
        let s = 2.0 * std::f64::consts::PI / 3.0;
        ThreePhase::new(
            amp * phase.cos(),
            amp * (phase - s).cos(),
            amp * (phase + s).cos(),
        )
    }

    #[test]
    fn space_phasor_examples() {
        let x = ThreePhase::new(1.0, -0.5, -0.5);
        let s = abc_to_space(&x).unwrap().0;
        assert!(close(s.re, 1.5, 1e-15) && close(s.im, 0.0, 1e-15));
        assert_eq!(abc_to_space(&ThreePhase::zero()).unwrap().0, Complex::new(0.0, 0.0));
        let s = abc_to_space(&cos_triple(1.0, 0.0)).unwrap().0;
        assert!(close(s.re, 1.5, 1e-15) && close(s.im, 0.0, 1e-15));
    }

    #[test]
    fn inverse_examples() {
        let x = space_to_abc(&SpacePhasor(Complex::new(1.5, 0.0)));
        assert!(close(x.a, 1.0, 1e-15) && close(x.b, -0.5, 1e-15) && close(x.c, -0.5, 1e-15));
        let x = space_to_abc(&SpacePhasor(Complex::new(0.0, 1.5)));
        let h = 3f64.sqrt() / 2.0;
        assert!(close(x.a, 0.0, 1e-15) && close(x.b, h, 1e-15) && close(x.c, -h, 1e-15));
        assert_eq!(space_to_abc(&SpacePhasor(Complex::new(0.0, 0.0))), ThreePhase::zero());
    }

    #[test]
    fn rejects_unbalanced() {
        let err = abc_to_space(&ThreePhase::new(1.0, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, FrameError::Unbalanced { .. }));
        assert!(power_abc(&ThreePhase::new(1.0, 1.0, 1.0), &ThreePhase::zero()).is_err());
    }

    #[test]
    fn global_frame_cancels_rotation() {
        for &t in &[0.0, 0.013, 0.7] {
            let xs = SpacePhasor(Complex::from_polar(1.5, W * t));
            let s = space_to_frame(&xs, Frame::GlobalDq, t, W).value;
            assert!(close(s.re, 1.5, 1e-12) && close(s.im, 0.0, 1e-12));
            let xs = SpacePhasor(Complex::from_polar(1.5, W * t + std::f64::consts::FRAC_PI_4));
            let s = space_to_frame(&xs, Frame::GlobalDq, t, W).value;
            let want = Complex::from_polar(1.5, std::f64::consts::FRAC_PI_4);
            assert!((s - want).norm() < 1e-12);
        }
    }

    #[test]
    fn local_frame_locked_gives_constant_phase() {
        let (w_ss, rho_bar, c0) = (W + 0.3, 0.4, -0.25);
        let mut phases = Vec::new();
        for k in 0..20 {
            let t = 0.01 * k as f64;
            let theta = w_ss * t + c0;
            let xs = SpacePhasor(Complex::from_polar(1.5, w_ss * t + rho_bar));
            phases.push(space_to_frame(&xs, Frame::LocalDq { theta }, t, W).value.arg());
        }
        for p in phases {
            assert!(close(p, rho_bar - c0, 1e-10));
        }
    }

    #[test]
    fn rms_phasor_examples() {
        let x = FrameSample { value: Complex::new(1.5, 0.0), frame: Frame::GlobalDq };
        let r = frame_to_rms_phasor(&x, 0.37, W, W).0;
        assert!(close(r.re, 1.5 * 2f64.sqrt() / 3.0, 1e-15) && close(r.im, 0.0, 1e-15));
        let z = FrameSample { value: Complex::new(0.0, 0.0), frame: Frame::GlobalDq };
        assert_eq!(frame_to_rms_phasor(&z, 1.0, W, W).0, Complex::new(0.0, 0.0));
        let xs = abc_to_space(&cos_triple(1.0, 0.2)).unwrap();
        let s = space_to_frame(&xs, Frame::GlobalDq, 0.0, W);
        let r = frame_to_rms_phasor(&s, 0.0, W, W).0;
        assert!(close(r.norm(), 1.0 / 2f64.sqrt(), 1e-15));
    }

    #[test]
    fn rms_phasor_local_matches_global() {
        let (w_ss, t, theta) = (W - 0.2, 3.1, 1234.5);
        let xs = SpacePhasor(Complex::from_polar(2.0, 0.9));
        let g = space_to_frame(&xs, Frame::GlobalDq, t, W);
        let l = space_to_frame(&xs, Frame::LocalDq { theta }, t, W);
        let rg = frame_to_rms_phasor(&g, t, W, w_ss).0;
        let rl = frame_to_rms_phasor(&l, t, W, w_ss).0;
        assert!((rg - rl).norm() < 1e-9);
    }

    #[test]
    fn source_reconstruction() {
        let e = dq_to_abc_source(1.5, 0.0, 0.0);
        assert!(close(e.a, 1.0, 1e-15) && close(e.b, -0.5, 1e-15) && close(e.c, -0.5, 1e-15));
        assert_eq!(dq_to_abc_source(0.0, 0.3, 2.0), ThreePhase::zero());
        let (mag, delta, theta) = (2.3, -0.4, 17.0);
        let xs = abc_to_space(&dq_to_abc_source(mag, delta, theta)).unwrap();
        let local = space_to_frame(&xs, Frame::LocalDq { theta }, 0.0, W).value;
        assert!((local - Complex::from_polar(mag, delta)).norm() < 1e-12);
    }

    #[test]
    fn power_examples() {
        let v = cos_triple(1.0, 0.0);
        let p = power_abc(&v, &v).unwrap();
        assert!(close(p.p, 1.5, 1e-15) && close(p.q, 0.0, 1e-15));
        let p = power_abc(&v, &ThreePhase::zero()).unwrap();
        assert_eq!((p.p, p.q), (0.0, 0.0));
        let i = cos_triple(1.0, -std::f64::consts::FRAC_PI_2);
        let p = power_abc(&v, &i).unwrap();
        assert!(close(p.p, 0.0, 1e-15) && close(p.q, 1.5, 1e-15));

        let g = |x: f64| FrameSample { value: Complex::new(x, 0.0), frame: Frame::GlobalDq };
        let p = power_frame(&g(1.5), &g(1.5)).unwrap();
        assert!(close(p.p, 1.5, 1e-15) && close(p.q, 0.0, 1e-15));
        assert_eq!(power_frame(&g(1.5), &g(0.0)).unwrap().s, Complex::new(0.0, 0.0));
        let l = FrameSample { value: Complex::new(1.0, 0.0), frame: Frame::LocalDq { theta: 0.1 } };
        assert_eq!(power_frame(&g(1.0), &l), Err(FrameError::FrameMismatch));

        let r = 1.0 / 2f64.sqrt();
        let p = power_rms(&RmsPhasor(Complex::new(r, 0.0)), &RmsPhasor(Complex::new(r, 0.0)));
        assert!(close(p.p, 1.5, 1e-15) && close(p.q, 0.0, 1e-15));
        let p = power_rms(&RmsPhasor(Complex::new(r, 0.0)), &RmsPhasor(Complex::new(0.0, 0.0)));
        assert_eq!(p.s, Complex::new(0.0, 0.0));
        let p = power_rms(&RmsPhasor(Complex::new(r, 0.0)), &RmsPhasor(Complex::new(0.0, -r)));
        assert!(close(p.p, 0.0, 1e-15) && close(p.q, 1.5, 1e-15));
    }

    #[test]
    fn single_precision_round_trip() {
        let x = ThreePhase::new(1.0f32, -0.25, -0.75);
        let back = space_to_abc(&abc_to_space(&x).unwrap());
        assert!((back.a - x.a).abs() < 1e-6 && (back.c - x.c).abs() < 1e-6);
    }

    #[test]
    fn sinusoid_magnitude_and_phase_rate() {
        let (amp, w_ss, rho) = (2.0, W + 0.5, 0.3);
        let h = 1e-5;
        let sample = |t: f64| {
            let xs = abc_to_space(&cos_triple(amp, w_ss * t + rho)).unwrap();
            space_to_frame(&xs, Frame::GlobalDq, t, W).value
        };
        for &t in &[0.0, 0.1, 0.25] {
            assert!(close(sample(t).norm(), 1.5 * amp, 1e-12));
            let rate = (sample(t + h).arg() - sample(t - h).arg()) / (2.0 * h);
            assert!(close(rate, w_ss - W, 1e-6));
        }
    }

    #[test]
    fn rms_power_equals_period_average() {
        let (vamp, iamp, pv, pi) = (1.7, 0.6, 0.3, -0.9);
        let n = 2000;
        let period = 2.0 * std::f64::consts::PI / W;
        let mut acc = 0.0;
        for k in 0..n {
            let t = period * k as f64 / n as f64;
            let v = cos_triple(vamp, W * t + pv);
            let i = cos_triple(iamp, W * t + pi);
            acc += power_abc(&v, &i).unwrap().p;
        }
        let avg = acc / n as f64;
        let vr = RmsPhasor(Complex::from_polar(vamp / 2f64.sqrt(), pv));
        let ir = RmsPhasor(Complex::from_polar(iamp / 2f64.sqrt(), pi));
        let p = power_rms(&vr, &ir).p;
        assert!((avg - p).abs() <= 1e-8 * p.abs().max(1.0));
    }

    fn balanced() -> impl Strategy<Value = ThreePhase<f64>> {
        (-1e3..1e3f64, -1e3..1e3f64).prop_map(|(a, b)| ThreePhase::new(a, b, -a - b))
    }

    proptest! {
        #[test]
        fn abc_round_trip(x in balanced()) {
            let back = space_to_abc(&abc_to_space(&x).unwrap());
            let scale = x.max_abs().max(1e-300);
            prop_assert!((back.a - x.a).abs() <= 1e-12 * scale);
            prop_assert!((back.b - x.b).abs() <= 1e-12 * scale);
            prop_assert!((back.c - x.c).abs() <= 1e-12 * scale);
        }

        #[test]
        fn power_agrees_across_frames(v in balanced(), i in balanced(), t in 0.0..10.0f64, theta in -1e3..1e3f64) {
            let pa = power_abc(&v, &i).unwrap();
            let scale = v.max_abs().max(1.0) * i.max_abs().max(1.0);
            for frame in [Frame::GlobalDq, Frame::LocalDq { theta }] {
                let vf = space_to_frame(&abc_to_space(&v).unwrap(), frame, t, W);
                let i_f = space_to_frame(&abc_to_space(&i).unwrap(), frame, t, W);
                let pf = power_frame(&vf, &i_f).unwrap();
                prop_assert!((pf.p - pa.p).abs() < 1e-10 * scale);
                prop_assert!((pf.q - pa.q).abs() < 1e-10 * scale);
            }
        }

        #[test]
        fn magnitude_is_frame_invariant(x in balanced(), t in 0.0..10.0f64, theta in -1e4..1e4f64) {
            let xs = abc_to_space(&x).unwrap();
            let g = space_to_frame(&xs, Frame::GlobalDq, t, W).value.norm();
            let l = space_to_frame(&xs, Frame::LocalDq { theta }, t, W).value.norm();
            prop_assert!((g - l).abs() <= 1e-12 * g.max(1.0));
        }

        #[test]
        fn angle_consistency(x in balanced(), t in 0.0..1.0f64, theta in -10.0..10.0f64) {
            let xs = abc_to_space(&x).unwrap();
            prop_assume!(xs.0.norm() > 1e-3);
            let rho = space_to_frame(&xs, Frame::GlobalDq, t, W).value.arg();
            let rho_local = space_to_frame(&xs, Frame::LocalDq { theta }, t, W).value.arg();
            let diff = (W * t + rho) - (theta + rho_local);
            let wrapped = diff - (diff / (2.0 * std::f64::consts::PI)).round() * 2.0 * std::f64::consts::PI;
            prop_assert!(wrapped.abs() < 1e-9);
        }
    }
}
