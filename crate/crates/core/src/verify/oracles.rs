use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CheckId, CheckOutcome};
use crate::case::Case;
use crate::frames::{abc_to_space, power_abc, power_frame, space_to_frame, Frame, ThreePhase};
use crate::network::{admittance_reduced, NetworkSpec};
use crate::resources::{GflParams, GfmFlavor, GfmParams, LocalSignals, ResourceError, SourceModel};
use crate::sim::{run, InitMode, Integrator, ModelKind, NodeResource, SimConfig, SimError, System, Trajectory};

pub const A6_TOL: f64 = 1e-10;
pub const A6_TRIALS: usize = 100;
pub const A7_TOL: f64 = 1e-10;
pub const A7_TRIALS: usize = 1000;
pub const A8_TOL: f64 = 1e-9;
pub const A8_HORIZON: f64 = 1.0;

const SEED: u64 = 0x5e_ed0f_a6a7;

/// Terminal admittance by Kron reduction of the bus admittance matrix over
/// resource terminals and network nodes.
pub fn kron_oracle(spec: &NetworkSpec, omega: f64) -> DMatrix<Complex64> {
    let n = spec.n_nodes();
    let mut y = DMatrix::<Complex64>::zeros(2 * n, 2 * n);
    let mut stamp = |a: usize, b: usize, z: Complex64| {
        let g = z.inv();
        y[(a, a)] += g;
        y[(b, b)] += g;
        y[(a, b)] -= g;
        y[(b, a)] -= g;
    };
    for k in 0..n {
        stamp(k, n + k, Complex64::new(spec.r_iface()[k], omega * spec.l_iface()[k]));
    }
    for (e, &(a, b)) in spec.edges().iter().enumerate() {
        stamp(n + a, n + b, Complex64::new(spec.r_line()[e], omega * spec.l_line()[e]));
    }
    let ytt = y.view((0, 0), (n, n)).into_owned();
    let ytn = y.view((0, n), (n, n)).into_owned();
    let ynt = y.view((n, 0), (n, n)).into_owned();
    let ynn = y.view((n, n), (n, n)).into_owned();
    let inner = ynn.lu().solve(&ynt).expect("interface admittances make the inner block nonsingular");
    ytt - ytn * inner
}

fn random_network(rng: &mut impl Rng, n: usize) -> NetworkSpec {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|k| (rng.gen_range(0..k), k)).collect();
    for _ in 0..rng.gen_range(0..=n) {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b && !edges.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a)) {
            edges.push((a, b));
        }
    }
    let m = edges.len();
    let r = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
    let l = (0..m).map(|_| rng.gen_range(1e-4..1e-2)).collect();
    let r_i = (0..n).map(|_| rng.gen_range(0.0..0.5)).collect();
    let l_i = (0..n).map(|_| rng.gen_range(1e-4..5e-3)).collect();
    NetworkSpec::new(n, edges, r, l, r_i, l_i).expect("random network is valid")
}

fn inf_norm(m: &DMatrix<Complex64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Closed-form reduced admittance against Kron reduction on random 5-bus
/// networks and the case's own network.
pub fn check_admittance(case: &Case) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    let mut trials: Vec<(NetworkSpec, f64)> = vec![(case.network.clone(), case.omega_s)];
    for _ in 0..A6_TRIALS {
        let spec = random_network(&mut rng, 5);
        trials.push((spec, rng.gen_range(50.0..500.0)));
    }
    for (spec, w) in &trials {
        let y = match admittance_reduced(spec, *w) {
            Ok(y) => y.y,
            Err(e) => return CheckOutcome::failed(CheckId::A6, A6_TOL, e.to_string()),
        };
        worst = worst.max(inf_norm(&(y - kron_oracle(spec, *w))));
    }
    CheckOutcome::bound(
        CheckId::A6,
        worst,
        A6_TOL,
        format!("{} random 5-bus networks and the case network, infinity norm in S", A6_TRIALS),
    )
}

fn sinusoid(amp: f64, phase: f64) -> ThreePhase<f64> {
    let s = 2.0 * std::f64::consts::PI / 3.0;
    ThreePhase::new(amp * phase.cos(), amp * (phase - s).cos(), amp * (phase + s).cos())
}

/// Active and reactive power on random balanced phase quantities, from the
/// phase values, the synchronous frame and a random local frame.
pub fn check_power_frames() -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 0xa7);
    let omega_s = 2.0 * std::f64::consts::PI * 60.0;
    let mut worst: f64 = 0.0;
    for _ in 0..A7_TRIALS {
        let (v_amp, i_amp) = (rng.gen_range(1.0..1e3), rng.gen_range(1e-2..1e2));
        let t = rng.gen_range(0.0..1.0);
        let phase = omega_s * t + rng.gen_range(-3.2..3.2);
        let v = sinusoid(v_amp, phase);
        let i = sinusoid(i_amp, phase - rng.gen_range(-3.2..3.2));
        let [va, vb, vc] = v.as_array();
        let [ia, ib, ic] = i.as_array();
        let p_ref = va * ia + vb * ib + vc * ic;
        let q_ref = ((vb - vc) * ia + (vc - va) * ib + (va - vb) * ic) / 3f64.sqrt();
        let (Ok(vs), Ok(is), Ok(abc)) = (abc_to_space(&v), abc_to_space(&i), power_abc(&v, &i)) else {
            return CheckOutcome::failed(CheckId::A7, A7_TOL, "balanced sample rejected");
        };
        let theta = rng.gen_range(-100.0..100.0);
        let mut got = vec![(abc.p, abc.q)];
        for frame in [Frame::GlobalDq, Frame::LocalDq { theta }] {
            let pv = power_frame(&space_to_frame(&vs, frame, t, omega_s), &space_to_frame(&is, frame, t, omega_s));
            match pv {
                Ok(s) => got.push((s.p, s.q)),
                Err(e) => return CheckOutcome::failed(CheckId::A7, A7_TOL, e.to_string()),
            }
        }
        let scale = v_amp * i_amp;
        for (p, q) in got {
            worst = worst.max((p - p_ref).abs() / scale).max((q - q_ref).abs() / scale);
        }
    }
    CheckOutcome::bound(CheckId::A7, worst, A7_TOL, format!("{A7_TRIALS} random pairs, relative to |v||i|"))
}

fn measured_power(sig: &LocalSignals) -> (f64, f64) {
    let (e, i) = (sig.e, sig.i);
    (2.0 / 3.0 * (e.re * i.re + e.im * i.im), 2.0 / 3.0 * (e.im * i.re - e.re * i.im))
}

/// Droop controller: filtered power sets frequency and voltage magnitude.
#[derive(Debug, Clone)]
pub struct DroopOracle {
    pub m_p: f64,
    pub m_q: f64,
    pub tau_p: f64,
    pub p_star: f64,
    pub q_star: f64,
    pub e_star: f64,
    pub omega_s: f64,
}

impl SourceModel for DroopOracle {
    fn kind(&self) -> &'static str {
        "droop-oracle"
    }

    fn state_names(&self) -> Vec<&'static str> {
        vec!["p_meas", "q_meas"]
    }

    fn flat_start(&self) -> Vec<f64> {
        vec![self.p_star, self.q_star]
    }

    fn emf(&self, x: &[f64], _i: Complex64) -> Result<Complex64, ResourceError> {
        Ok(Complex64::new(self.e_star - self.m_q * (x[1] - self.q_star), 0.0))
    }

    fn rhs(&self, x: &[f64], sig: &LocalSignals, dx: &mut [f64]) -> Result<f64, ResourceError> {
        let (p, q) = measured_power(sig);
        dx[0] = (p - x[0]) / self.tau_p;
        dx[1] = (q - x[1]) / self.tau_p;
        Ok(self.omega_s - self.m_p * (x[0] - self.p_star))
    }

    fn steady_start(
        &self,
        e: Complex64,
        i: Complex64,
        v: Complex64,
        _omega_ss: f64,
    ) -> Result<(Vec<f64>, f64), ResourceError> {
        let (p, q) = measured_power(&LocalSignals { v, i, e });
        Ok((vec![p, q], e.arg()))
    }
}

/// Virtual synchronous machine written as a swing equation with the
/// droop slope as governor gain.
#[derive(Debug, Clone)]
pub struct VsmOracle {
    pub inertia: f64,
    pub damping: f64,
    pub m_p: f64,
    pub m_q: f64,
    pub tau_p: f64,
    pub k_p_pll: f64,
    pub k_i_pll: f64,
    pub p_star: f64,
    pub q_star: f64,
    pub e_star: f64,
    pub omega_s: f64,
}

impl VsmOracle {
    fn magnitude(&self, x: &[f64]) -> f64 {
        self.e_star - self.m_q * (x[1] - self.q_star)
    }
}

impl SourceModel for VsmOracle {
    fn kind(&self) -> &'static str {
        "vsm-oracle"
    }

    fn state_names(&self) -> Vec<&'static str> {
        vec!["p_meas", "q_meas", "speed", "pll_int"]
    }

    fn flat_start(&self) -> Vec<f64> {
        vec![self.p_star, self.q_star, self.omega_s, 0.0]
    }

    fn drifting_states(&self) -> Vec<usize> {
        vec![3]
    }

    fn emf(&self, x: &[f64], _i: Complex64) -> Result<Complex64, ResourceError> {
        Ok(Complex64::new(self.magnitude(x), 0.0))
    }

    fn rhs(&self, x: &[f64], sig: &LocalSignals, dx: &mut [f64]) -> Result<f64, ResourceError> {
        let (p, q) = measured_power(sig);
        let err = -self.magnitude(x);
        let pll = self.k_p_pll * err + self.k_i_pll * x[3];
        let governor = (x[2] - self.omega_s) / self.m_p;
        dx[0] = (p - x[0]) / self.tau_p;
        dx[1] = (q - x[1]) / self.tau_p;
        dx[2] = (self.p_star - x[0] - governor + self.damping * pll) / self.inertia;
        dx[3] = err;
        Ok(x[2])
    }

    fn steady_start(
        &self,
        e: Complex64,
        i: Complex64,
        v: Complex64,
        omega_ss: f64,
    ) -> Result<(Vec<f64>, f64), ResourceError> {
        let (p, q) = measured_power(&LocalSignals { v, i, e });
        Ok((vec![p, q, omega_ss, 0.0], e.arg()))
    }
}

fn two_bus(omega_s: f64, source: NodeResource) -> Result<System, SimError> {
    let net = NetworkSpec::new(2, vec![(0, 1)], vec![0.05], vec![2e-3], vec![0.02; 2], vec![1e-3; 2])?;
    let load = GflParams {
        k_p_current: 1.0,
        k_i_current: 50.0,
        k_p_pll: 0.5,
        k_i_pll: 16.0,
        k_p_power: 1e-3,
        k_i_power: 0.1,
        s_star: Complex64::new(-150.0, -20.0),
    };
    System::new(net, vec![source, NodeResource::Gfl(load)], omega_s, ModelKind::M2)
}

fn simulate(sys: &System) -> Result<Trajectory, SimError> {
    let x0 = sys.initial_state(InitMode::Flat)?;
    let config = SimConfig {
        t_end: A8_HORIZON,
        dt: 2e-5,
        integrator: Integrator::Rk4,
        record_stride: 50,
        steady_detect: None,
    };
    run(sys, &x0, &config)
}

fn max_rel<'a>(a: impl Iterator<Item = (f64, f64)> + 'a) -> f64 {
    let (mut err, mut scale): (f64, f64) = (0.0, 0.0);
    for (x, y) in a {
        err = err.max((x - y).abs());
        scale = scale.max(y.abs());
    }
    err / scale.max(f64::MIN_POSITIVE)
}

/// Largest relative deviation between two trajectories over each signal
/// group.
fn trajectory_error(a: &Trajectory, b: &Trajectory) -> f64 {
    let pairs = || a.records.iter().zip(&b.records).map(|(x, y)| (&x.signals, &y.signals));
    let complex = max_rel(pairs().flat_map(|(x, y)| {
        let xs = x.e.iter().chain(&x.i).chain(&x.v).chain(&x.f);
        let ys = y.e.iter().chain(&y.i).chain(&y.v).chain(&y.f);
        xs.zip(ys).flat_map(|(p, q)| [(p.re, q.re), (p.im, q.im)])
    }));
    let real = |get: fn(&crate::sim::Signals) -> &Vec<f64>| {
        max_rel(pairs().flat_map(move |(x, y)| get(x).iter().copied().zip(get(y).iter().copied()).collect::<Vec<_>>()))
    };
    [complex, real(|s| &s.omega), real(|s| &s.theta), real(|s| &s.e_mag), real(|s| &s.p), real(|s| &s.q)]
        .into_iter()
        .fold(0.0, f64::max)
}

fn bindings_case(case: &Case, flavor: GfmFlavor) -> GfmParams {
    let from_case = case.resources.iter().find_map(|r| match r {
        NodeResource::Gfm(p) if p.flavor == flavor => Some(*p),
        _ => None,
    });
    from_case.unwrap_or(match flavor {
        GfmFlavor::Vsm => GfmParams::vsm(2e-3, 0.01, 10.0, 5.0, 0.05, 0.01, 0.0, 100.0, 0.0, 150.0),
        _ => GfmParams::droop(2e-3, 0.01, 0.05, 100.0, 0.0, 150.0),
    })
}

fn compare(omega_s: f64, generic: GfmParams, oracle: Arc<dyn SourceModel>) -> Result<f64, SimError> {
    let a = simulate(&two_bus(omega_s, NodeResource::Gfm(generic))?)?;
    let b = simulate(&two_bus(omega_s, NodeResource::Custom(oracle))?)?;
    Ok(trajectory_error(&a, &b))
}

/// Generic grid-forming model under droop and VSM bindings against
/// separately written controllers, each feeding a current-following load.
pub fn check_gfm_bindings(case: &Case) -> CheckOutcome {
    let w = case.omega_s;
    let d = bindings_case(case, GfmFlavor::Droop);
    let v = bindings_case(case, GfmFlavor::Vsm);
    let droop = DroopOracle {
        m_p: d.m_p,
        m_q: d.m_q,
        tau_p: d.tau_p,
        p_star: d.p_star,
        q_star: d.q_star,
        e_star: d.e_star,
        omega_s: w,
    };
    let vsm = VsmOracle {
        inertia: v.inertia,
        damping: v.damping,
        m_p: v.m_p,
        m_q: v.m_q,
        tau_p: v.tau_p,
        k_p_pll: v.k_p_pll,
        k_i_pll: v.k_i_pll,
        p_star: v.p_star,
        q_star: v.q_star,
        e_star: v.e_star,
        omega_s: w,
    };
    let errs = std::thread::scope(|s| {
        let a = s.spawn(|| compare(w, d, Arc::new(droop)));
        let b = s.spawn(|| compare(w, v, Arc::new(vsm)));
        (a.join(), b.join())
    });
    match errs {
        (Ok(Ok(ed)), Ok(Ok(ev))) => CheckOutcome::bound(
            CheckId::A8,
            ed.max(ev),
            A8_TOL,
            format!("{A8_HORIZON} s, two-bus with current-following load"),
        )
        .with_extra("droop", ed)
        .with_extra("vsm", ev),
        (Ok(Err(e)), _) | (_, Ok(Err(e))) => CheckOutcome::failed(CheckId::A8, A8_TOL, e.to_string()),
        _ => CheckOutcome::failed(CheckId::A8, A8_TOL, "comparison panicked"),
    }
}
