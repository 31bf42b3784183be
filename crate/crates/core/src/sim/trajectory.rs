//! Time-stepping loop, recorded trajectories and steady-state extraction.

use std::io::Write;

use num_complex::Complex64;

use super::{ModelKind, SimConfig, SimError, Signals, Stepper, System};
use crate::frames::{frame_to_rms_phasor, power_rms, Frame, FrameSample, RmsPhasor};
use crate::steady::{PhasorSolution, PowerFlowModel};

const J: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub t: f64,
    pub signals: Signals,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyInfo {
    /// Time at which the derivative test had held for a full window.
    pub t_ss: f64,
    /// Mean frame frequency of the reference resource over the window.
    pub omega_ss: f64,
    /// Relative derivative norm at detection.
    pub metric: f64,
    pub reference: usize,
    pub record: Record,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub model: ModelKind,
    pub omega_s: f64,
    /// Rotation rate of the frame network phasors are recorded in.
    pub frame_frequency: f64,
    pub n_edges: usize,
    pub records: Vec<Record>,
    pub steady: Option<SteadyInfo>,
    pub final_state: Vec<f64>,
    pub final_time: f64,
}

/// Resource whose frame defines the steady frequency and the zero angle:
/// the first generator, else the first grid-forming inverter, else node 0.
fn reference_node(sys: &System) -> usize {
    let kinds: Vec<&str> = sys.resources().iter().map(|r| r.kind()).collect();
    kinds
        .iter()
        .position(|k| *k == "sg")
        .or_else(|| kinds.iter().position(|k| *k == "gfm"))
        .unwrap_or(0)
}

/// Largest state derivative relative to the state scale. Network phasors
/// are measured in a frame turning at `omega_ref` so a sinusoidal steady
/// state reads as stationary; angles are skipped.
fn derivative_metric(sys: &System, x: &[f64], dx: &[f64], omega_ref: f64) -> f64 {
    let lay = sys.layout();
    let slip = omega_ref - sys.frame_frequency();
    let mut skip = vec![false; x.len()];
    let mut worst: f64 = 0.0;
    for at in lay.network_phasors(sys.network().n_edges()) {
        let z = sys.phasor(x, at);
        let dz = sys.phasor(dx, at) - J * slip * z;
        worst = worst.max(dz.norm());
        for s in skip.iter_mut().skip(at).take(lay.width) {
            *s = true;
        }
    }
    let mut scale: f64 = 1.0;
    for k in 0..x.len() {
        if lay.is_drifting(k) {
            continue;
        }
        scale = scale.max(x[k].abs());
        if !skip[k] {
            worst = worst.max(dx[k].abs());
        }
    }
    worst / scale
}

/// Integrates `sys` from `x0` at `t = 0`.
pub fn run(sys: &System, x0: &[f64], config: &SimConfig) -> Result<Trajectory, SimError> {
    config.validate()?;
    if x0.len() != sys.dim() {
        return Err(SimError::Config(format!("initial state has {} entries, expected {}", x0.len(), sys.dim())));
    }
    let reference = reference_node(sys);
    let mut stepper = Stepper::new(sys, config.integrator);
    let mut x = x0.to_vec();
    let mut dx = vec![0.0; x.len()];
    let mut t = 0.0;
    let mut sig = sys.eval(t, &x, &mut dx)?;
    let mut records = vec![Record { t, signals: sig.clone() }];
    let mut steady = None;
    // start of the current quiet stretch and the reference angle there
    let mut quiet: Option<(f64, f64)> = None;
    let steps = config.steps();
    for k in 1..=steps {
        // the last step is shortened to land on t_end
        let t_next = if k == steps { config.t_end } else { k as f64 * config.dt };
        x = stepper.advance(t, &x, &dx, t_next - t)?;
        t = t_next;
        sig = sys.eval(t, &x, &mut dx)?;
        let mut recorded = false;
        if k % config.record_stride == 0 || k == steps {
            records.push(Record { t, signals: sig.clone() });
            recorded = true;
        }
        if let (Some(det), None) = (config.steady_detect, &steady) {
            let metric = derivative_metric(sys, &x, &dx, sig.omega[reference]);
            if metric < det.tol {
                let (t0, th0) = *quiet.get_or_insert((t, sig.theta[reference]));
                if t - t0 >= det.window - 0.5 * config.dt {
                    steady = Some(SteadyInfo {
                        t_ss: t,
                        omega_ss: (sig.theta[reference] - th0) / (t - t0),
                        metric,
                        reference,
                        record: Record { t, signals: sig.clone() },
                    });
                    if det.stop {
                        if !recorded {
                            records.push(Record { t, signals: sig.clone() });
                        }
                        break;
                    }
                }
            } else {
                quiet = None;
            }
        }
    }
    Ok(Trajectory {
        model: sys.model(),
        omega_s: sys.omega_s(),
        frame_frequency: sys.frame_frequency(),
        n_edges: sys.network().n_edges(),
        records,
        steady,
        final_state: x,
        final_time: t,
    })
}

/// RMS phasors of the detected steady state, rotated so the reference
/// resource's terminal voltage has zero angle.
pub fn extract_steady(traj: &Trajectory) -> Result<PhasorSolution, SimError> {
    let info = traj.steady.as_ref().ok_or(SimError::NotSettled)?;
    let (t, w_ss) = (info.record.t, info.omega_ss);
    let to_rms = |z: Complex64| {
        let dq = z * Complex64::from_polar(1.0, (traj.frame_frequency - traj.omega_s) * t);
        frame_to_rms_phasor(&FrameSample { value: dq, frame: Frame::GlobalDq }, t, traj.omega_s, w_ss).0
    };
    let s = &info.record.signals;
    let e0: Vec<Complex64> = s.e.iter().map(|&z| to_rms(z)).collect();
    let align = Complex64::from_polar(1.0, -e0[info.reference].arg());
    let e: Vec<Complex64> = e0.iter().map(|z| z * align).collect();
    let i: Vec<Complex64> = s.i.iter().map(|&z| to_rms(z) * align).collect();
    let v: Vec<Complex64> = s.v.iter().map(|&z| to_rms(z) * align).collect();
    let f: Vec<Complex64> = s.f.iter().map(|&z| to_rms(z) * align).collect();
    let pq: Vec<_> = e.iter().zip(&i).map(|(&a, &b)| power_rms(&RmsPhasor(a), &RmsPhasor(b))).collect();
    let mut delta: Vec<f64> = e.iter().map(|z| z.arg()).collect();
    delta[info.reference] = 0.0;
    Ok(PhasorSolution {
        model: PowerFlowModel::M3,
        e,
        delta,
        p: pq.iter().map(|x| x.p).collect(),
        q: pq.iter().map(|x| x.q).collect(),
        omega_ss: w_ss,
        i,
        v,
        f,
        iterations: 0,
        residual: info.metric,
    })
}

impl Trajectory {
    fn network_frame(&self) -> (&'static str, &'static [&'static str]) {
        if self.model == ModelKind::M1 {
            ("abc", &["a", "b", "c"])
        } else {
            ("DQ", &["d", "q"])
        }
    }

    pub fn header(&self) -> Vec<String> {
        let n = self.records.first().map_or(0, |r| r.signals.e.len());
        let (frame, parts) = self.network_frame();
        let mut h = vec!["time_s".to_string()];
        for k in 0..n {
            for sig in ["e_mag_v", "delta_rad", "omega_rad_s", "theta_rad", "p_w", "q_var"] {
                h.push(format!("n{k}.{sig}.local"));
            }
            for (name, unit) in [("i", "a"), ("v", "v")] {
                for p in parts {
                    h.push(format!("n{k}.{name}_{p}_{unit}.{frame}"));
                }
            }
        }
        for e in 0..self.n_edges {
            for p in parts {
                h.push(format!("l{e}.f_{p}_a.{frame}"));
            }
        }
        h
    }

    fn row(&self, r: &Record) -> Vec<f64> {
        let s = &r.signals;
        let three = self.model == ModelKind::M1;
        let parts = |z: Complex64| -> Vec<f64> {
            if three {
                crate::frames::space_to_abc(&crate::frames::SpacePhasor(z)).as_array().to_vec()
            } else {
                vec![z.re, z.im]
            }
        };
        let mut out = vec![r.t];
        for k in 0..s.e.len() {
            out.extend([s.e_mag[k], s.delta[k], s.omega[k], s.theta[k], s.p[k], s.q[k]]);
            out.extend(parts(s.i[k]));
            out.extend(parts(s.v[k]));
        }
        for z in &s.f {
            out.extend(parts(*z));
        }
        out
    }

    /// Writes the recorded signals as CSV: time in the first column, then
    /// `<node>.<signal>_<unit>.<frame>` columns.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.header().join(","))?;
        for r in &self.records {
            let row: Vec<String> = self.row(r).iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}
