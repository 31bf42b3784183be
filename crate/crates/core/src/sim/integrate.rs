//! Fixed-step integrators.

use nalgebra::{DMatrix, DVector, LU, Dyn};
use serde::{Deserialize, Serialize};

use super::{SimError, System};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Classical fourth-order Runge-Kutta.
    Rk4,
    /// Trapezoidal rule with a simplified Newton iteration.
    Trapezoidal,
}

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_ITERS: usize = 8;

/// Integrator with the scratch state it keeps between steps.
pub struct Stepper<'a> {
    sys: &'a System,
    integrator: Integrator,
    /// Factorised `I - h/2 J` and the step it was built for.
    newton: Option<(LU<f64, Dyn, Dyn>, f64)>,
}

impl<'a> Stepper<'a> {
    pub fn new(sys: &'a System, integrator: Integrator) -> Self {
        Self { sys, integrator, newton: None }
    }

    pub fn rhs(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, SimError> {
        let mut dx = vec![0.0; x.len()];
        self.sys.eval(t, x, &mut dx)?;
        Ok(dx)
    }

    /// Advances `x` from `t` by `h`, given `f0 = f(t, x)`.
    pub fn advance(&mut self, t: f64, x: &[f64], f0: &[f64], h: f64) -> Result<Vec<f64>, SimError> {
        match self.integrator {
            Integrator::Rk4 => self.rk4(t, x, f0, h),
            Integrator::Trapezoidal => self.trapezoidal(t, x, f0, h),
        }
    }

    fn rk4(&self, t: f64, x: &[f64], k1: &[f64], h: f64) -> Result<Vec<f64>, SimError> {
        let axpy = |k: &[f64], c: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + c * b).collect() };
        let k2 = self.rhs(t + 0.5 * h, &axpy(k1, 0.5 * h))?;
        let k3 = self.rhs(t + 0.5 * h, &axpy(&k2, 0.5 * h))?;
        let k4 = self.rhs(t + h, &axpy(&k3, h))?;
        Ok((0..x.len())
            .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect())
    }

    fn jacobian(&self, t: f64, x: &[f64], fx: &[f64]) -> Result<DMatrix<f64>, SimError> {
        let n = x.len();
        let mut jac = DMatrix::zeros(n, n);
        let mut xp = x.to_vec();
        for c in 0..n {
            let d = 1e-7 * x[c].abs().max(1.0);
            xp[c] = x[c] + d;
            let fp = self.rhs(t, &xp)?;
            xp[c] = x[c];
            for r in 0..n {
                jac[(r, c)] = (fp[r] - fx[r]) / d;
            }
        }
        Ok(jac)
    }

    fn factor(&mut self, t: f64, x: &[f64], fx: &[f64], h: f64) -> Result<(), SimError> {
        let n = x.len();
        let m = DMatrix::identity(n, n) - self.jacobian(t, x, fx)? * (0.5 * h);
        self.newton = Some((m.lu(), h));
        Ok(())
    }

    fn trapezoidal(&mut self, t: f64, x: &[f64], f0: &[f64], h: f64) -> Result<Vec<f64>, SimError> {
        if !matches!(self.newton, Some((_, hh)) if hh == h) {
            self.factor(t, x, f0, h)?;
        }
        let mut refreshed = false;
        loop {
            let mut y: Vec<f64> = x.iter().zip(f0).map(|(a, b)| a + h * b).collect();
            let mut converged = false;
            for _ in 0..NEWTON_ITERS {
                let fy = self.rhs(t + h, &y)?;
                let g = DVector::from_iterator(y.len(), (0..y.len()).map(|i| y[i] - x[i] - 0.5 * h * (f0[i] + fy[i])));
                let (lu, _) = self.newton.as_ref().expect("factorised above");
                let delta = lu.solve(&g).ok_or(SimError::Singular { t, context: "implicit-step matrix" })?;
                let mut worst: f64 = 0.0;
                for i in 0..y.len() {
                    y[i] -= delta[i];
                    worst = worst.max(delta[i].abs() / (1.0 + y[i].abs()));
                }
                if !worst.is_finite() {
                    break;
                }
                if worst < NEWTON_TOL {
                    converged = true;
                    break;
                }
            }
            if converged {
                return Ok(y);
            }
            if refreshed {
                return Err(SimError::Newton { t });
            }
            self.factor(t, x, f0, h)?;
            refreshed = true;
        }
    }
}

/// One step from `(t, x)`.
pub fn step(sys: &System, integrator: Integrator, x: &[f64], t: f64, dt: f64) -> Result<Vec<f64>, SimError> {
    let mut s = Stepper::new(sys, integrator);
    let f0 = s.rhs(t, x)?;
    s.advance(t, x, &f0, dt)
}
