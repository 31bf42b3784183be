//! Assembly of network and resources into one state vector, and evaluation
//! of its right-hand side with the node voltages resolved algebraically.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use num_complex::Complex64;

use super::{ModelKind, SimError};
use crate::frames::{abc_to_space_unchecked, dq_to_abc_source, power_from_space, space_to_abc, SpacePhasor, ThreePhase};
use crate::network::NetworkSpec;
use crate::resources::sg::{
    current_rate_affine, generator_current, sg_equilibrium, sg_flat_start, sg_rhs_with, FluxMap, SgFeedback,
    SgParams, SgState, SG_STATE_NAMES,
};
use crate::resources::{Gfl, GflParams, Gfm, GfmParams, LocalSignals, SourceModel};
use crate::steady::{BusModel, PhasorSolution};

const J: Complex64 = Complex64::new(0.0, 1.0);

/// Resource placed at a network node.
#[derive(Debug, Clone)]
pub enum NodeResource {
    Sg(SgParams),
    Gfl(GflParams),
    Gfm(GfmParams),
    /// Any other controlled source behind the node's interface branch.
    Custom(Arc<dyn SourceModel>),
}

impl NodeResource {
    pub fn kind(&self) -> &'static str {
        match self {
            NodeResource::Sg(_) => "sg",
            NodeResource::Gfl(_) => "gfl",
            NodeResource::Gfm(_) => "gfm",
            NodeResource::Custom(m) => m.kind(),
        }
    }

    /// Steady-state bus model, if the resource has one.
    pub fn bus_model(&self) -> Option<BusModel> {
        match self {
            NodeResource::Sg(p) => Some(BusModel::from_sg(p)),
            NodeResource::Gfl(p) => Some(BusModel::from_gfl(p)),
            NodeResource::Gfm(p) => Some(BusModel::from_gfm(p)),
            NodeResource::Custom(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
struct SgNode {
    params: SgParams,
    /// Flux map with the interface branch folded into the stator.
    map: FluxMap,
    r_iface: f64,
    l_iface: f64,
}

#[derive(Debug, Clone)]
enum NodeModel {
    Sg(Box<SgNode>),
    Source(Arc<dyn SourceModel>),
}

/// Position of one node's entries in the state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSlot {
    pub kind: &'static str,
    /// Interface current, absent where the resource owns its stator current.
    pub current: Option<usize>,
    /// Resource states (for generators this includes the rotor angle).
    pub states: Range<usize>,
    /// Entry holding the frame angle, or the mechanical rotor angle for
    /// generators.
    pub angle: usize,
    /// Other entries that drift without bound.
    pub drifting: Vec<usize>,
}

/// Partition of the state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub nodes: Vec<NodeSlot>,
    /// First line-current entry; absent when lines are algebraic.
    pub lines: Option<usize>,
    /// Reals per network phasor: 3 for phase quantities, 2 for DQ.
    pub width: usize,
    pub dim: usize,
    pub names: Vec<String>,
}

impl Layout {
    /// Quantities resolved algebraically at every evaluation.
    pub fn algebraic(&self, model: ModelKind) -> Vec<&'static str> {
        let mut out = vec!["node voltages"];
        if model == ModelKind::M2Prime {
            out.push("line currents");
        }
        out.push("grid-forming outputs whose time constant is zero");
        out
    }

    /// Index ranges of network phasor states.
    pub fn network_phasors(&self, n_edges: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.nodes.iter().filter_map(|s| s.current).collect();
        if let Some(l) = self.lines {
            out.extend((0..n_edges).map(|k| l + k * self.width));
        }
        out
    }

    /// True for angles and other entries that grow without bound.
    pub fn is_drifting(&self, k: usize) -> bool {
        self.nodes.iter().any(|s| s.angle == k || s.drifting.contains(&k))
    }
}

/// Network and resources bound together for one model kind.
#[derive(Debug, Clone)]
pub struct System {
    model: ModelKind,
    net: NetworkSpec,
    omega_s: f64,
    resources: Vec<NodeResource>,
    nodes: Vec<NodeModel>,
    layout: Layout,
    /// `B diag(1/l) B^T` over the lines.
    lap_inv_l: DMatrix<f64>,
}

/// Signals resolved at one evaluation. Network phasors are in the model
/// frame (stationary for phase-domain models, synchronous DQ otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct Signals {
    pub e: Vec<Complex64>,
    pub i: Vec<Complex64>,
    pub v: Vec<Complex64>,
    pub f: Vec<Complex64>,
    pub omega: Vec<f64>,
    pub theta: Vec<f64>,
    /// Terminal voltage magnitude and angle in each resource's frame.
    pub e_mag: Vec<f64>,
    pub delta: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

fn rot(angle: f64) -> Matrix2<f64> {
    let (s, c) = angle.sin_cos();
    Matrix2::new(c, -s, s, c)
}

fn apply(m: &Matrix2<f64>, z: Complex64) -> Complex64 {
    let w = m * Vector2::new(z.re, z.im);
    Complex64::new(w[0], w[1])
}

impl System {
    pub fn new(
        net: NetworkSpec,
        resources: Vec<NodeResource>,
        omega_s: f64,
        model: ModelKind,
    ) -> Result<Self, SimError> {
        if resources.len() != net.n_nodes() {
            return Err(SimError::ResourceCount { nodes: net.n_nodes(), resources: resources.len() });
        }
        if !(omega_s > 0.0 && omega_s.is_finite()) {
            return Err(SimError::Config(format!("synchronous frequency must be positive, got {omega_s}")));
        }
        let width = model.phasor_width();
        let mut nodes = Vec::with_capacity(resources.len());
        let mut slots = Vec::with_capacity(resources.len());
        let mut names = Vec::new();
        let mut k = 0;
        let phase_names = |prefix: &str, width: usize| -> Vec<String> {
            let sfx: &[&str] = if width == 3 { &["a", "b", "c"] } else { &["d", "q"] };
            sfx.iter().map(|s| format!("{prefix}_{s}")).collect()
        };
        for (n, res) in resources.iter().enumerate() {
            let node = match res {
                NodeResource::Sg(p) => {
                    p.validate().map_err(|source| SimError::Resource { node: n, source })?;
                    let (r_i, l_i) = (net.r_iface()[n], net.l_iface()[n]);
                    let map = FluxMap::new(p, r_i, l_i).map_err(|source| SimError::Resource { node: n, source })?;
                    NodeModel::Sg(Box::new(SgNode { params: *p, map, r_iface: r_i, l_iface: l_i }))
                }
                NodeResource::Gfl(p) => {
                    p.validate().map_err(|source| SimError::Resource { node: n, source })?;
                    NodeModel::Source(Arc::new(Gfl { params: *p, omega_s }))
                }
                NodeResource::Gfm(p) => {
                    p.validate().map_err(|source| SimError::Resource { node: n, source })?;
                    NodeModel::Source(Arc::new(Gfm { params: *p, omega_s }))
                }
                NodeResource::Custom(m) => NodeModel::Source(m.clone()),
            };
            let slot = match &node {
                NodeModel::Sg(_) => {
                    names.extend(SG_STATE_NAMES.iter().map(|s| format!("n{n}.{s}")));
                    let s = NodeSlot { kind: "sg", current: None, states: k..k + 12, angle: k + 5, drifting: vec![] };
                    k += 12;
                    s
                }
                NodeModel::Source(m) => {
                    names.extend(phase_names(&format!("n{n}.i"), width));
                    let current = k;
                    k += width;
                    let len = m.state_len();
                    names.extend(m.state_names().iter().map(|s| format!("n{n}.{s}")));
                    names.push(format!("n{n}.theta"));
                    let s = NodeSlot {
                        kind: m.kind(),
                        current: Some(current),
                        states: k..k + len,
                        angle: k + len,
                        drifting: m.drifting_states().into_iter().map(|d| k + d).collect(),
                    };
                    k += len + 1;
                    s
                }
            };
            nodes.push(node);
            slots.push(slot);
        }
        let lines = if model == ModelKind::M2Prime || net.n_edges() == 0 {
            None
        } else {
            let start = k;
            for e in 0..net.n_edges() {
                names.extend(phase_names(&format!("l{e}.f"), width));
            }
            k += width * net.n_edges();
            Some(start)
        };
        let inv_l: Vec<f64> = net.l_line().iter().map(|l| 1.0 / l).collect();
        let b = net.b();
        let lap_inv_l = b * DMatrix::from_diagonal(&DVector::from_vec(inv_l)) * b.transpose();
        Ok(Self {
            model,
            omega_s,
            resources,
            nodes,
            layout: Layout { nodes: slots, lines, width, dim: k, names },
            lap_inv_l,
            net,
        })
    }

    pub fn model(&self) -> ModelKind {
        self.model
    }

    pub fn network(&self) -> &NetworkSpec {
        &self.net
    }

    pub fn omega_s(&self) -> f64 {
        self.omega_s
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn resources(&self) -> &[NodeResource] {
        &self.resources
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    /// Rotation rate of the frame the network states are written in.
    pub fn frame_frequency(&self) -> f64 {
        match self.model {
            ModelKind::M1 => 0.0,
            ModelKind::M2 | ModelKind::M2Prime => self.omega_s,
        }
    }

    pub(crate) fn phasor(&self, x: &[f64], at: usize) -> Complex64 {
        if self.layout.width == 3 {
            abc_to_space_unchecked(&ThreePhase::new(x[at], x[at + 1], x[at + 2])).0
        } else {
            Complex64::new(x[at], x[at + 1])
        }
    }

    fn put_phasor(&self, dx: &mut [f64], at: usize, z: Complex64) {
        if self.layout.width == 3 {
            let abc = space_to_abc(&SpacePhasor(z));
            dx[at..at + 3].copy_from_slice(&abc.as_array());
        } else {
            dx[at] = z.re;
            dx[at + 1] = z.im;
        }
    }

    /// Frame angle of node `n`.
    pub fn frame_angle(&self, x: &[f64], n: usize) -> f64 {
        let slot = &self.layout.nodes[n];
        match &self.nodes[n] {
            NodeModel::Sg(sg) => sg.params.pole_pairs() * x[slot.angle],
            NodeModel::Source(_) => x[slot.angle],
        }
    }

    /// Right-hand side at time `t`; also returns the resolved signals.
    pub fn eval(&self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<Signals, SimError> {
        let n = self.net.n_nodes();
        let w_fr = self.frame_frequency();
        let res_err = |node: usize| move |source| SimError::Resource { node, source };

        // local frame -> model frame rotation angle per node
        let phi: Vec<f64> = (0..n).map(|k| self.frame_angle(x, k) - w_fr * t).collect();
        let mut cur = vec![Complex64::default(); n];
        let mut i_loc = vec![Complex64::default(); n];
        let mut e_loc = vec![Complex64::default(); n];
        let mut a = vec![Complex64::default(); n];
        let mut gain = vec![Matrix2::zeros(); n];
        let mut sg_states = vec![None; n];

        for (k, node) in self.nodes.iter().enumerate() {
            let slot = &self.layout.nodes[k];
            let to_model = Complex64::from_polar(1.0, phi[k]);
            match node {
                NodeModel::Sg(sg) => {
                    let st = SgState::from_slice(&x[slot.states.clone()]).map_err(res_err(k))?;
                    let ig = generator_current(&sg.map, &st);
                    let (a_loc, k_loc) = current_rate_affine(&sg.map, &st);
                    i_loc[k] = ig;
                    cur[k] = ig * to_model;
                    a[k] = (a_loc + J * (st.omega - w_fr) * ig) * to_model;
                    gain[k] = rot(phi[k]) * k_loc * rot(-phi[k]);
                    sg_states[k] = Some(st);
                }
                NodeModel::Source(m) => {
                    let i = self.phasor(x, slot.current.expect("sources own an interface current"));
                    let il = i * to_model.conj();
                    let el = m.emf(&x[slot.states.clone()], il).map_err(res_err(k))?;
                    let e = el * to_model;
                    let (r, l) = (self.net.r_iface()[k], self.net.l_iface()[k]);
                    cur[k] = i;
                    i_loc[k] = il;
                    e_loc[k] = el;
                    a[k] = (e - r * i - J * w_fr * l * i) / l;
                    gain[k] = Matrix2::identity() * (-1.0 / l);
                }
            }
        }

        let (v, f) = match self.layout.lines {
            Some(start) => {
                let f: Vec<Complex64> = (0..self.net.n_edges())
                    .map(|e| self.phasor(x, start + e * self.layout.width))
                    .collect();
                (self.solve_dynamic_lines(&a, &gain, &f, t)?, f)
            }
            None if self.model == ModelKind::M2Prime => {
                let v = self.solve_algebraic_lines(&a, &gain, &cur, t)?;
                let drops = self.net.across(&v);
                let f = drops
                    .iter()
                    .enumerate()
                    .map(|(e, d)| d / self.net.line_impedance(e, self.omega_s))
                    .collect();
                (v, f)
            }
            None => (self.solve_dynamic_lines(&a, &gain, &[], t)?, Vec::new()),
        };

        let mut sig = Signals {
            e: vec![Complex64::default(); n],
            i: cur.clone(),
            v: v.clone(),
            f: f.clone(),
            omega: vec![0.0; n],
            theta: (0..n).map(|k| self.frame_angle(x, k)).collect(),
            e_mag: vec![0.0; n],
            delta: vec![0.0; n],
            p: vec![0.0; n],
            q: vec![0.0; n],
        };

        for (k, node) in self.nodes.iter().enumerate() {
            let slot = &self.layout.nodes[k];
            let to_local = Complex64::from_polar(1.0, -phi[k]);
            let vl = v[k] * to_local;
            match node {
                NodeModel::Sg(sg) => {
                    let st = sg_states[k].expect("set above");
                    let (a_loc, k_loc) = current_rate_affine(&sg.map, &st);
                    let di = a_loc + apply(&k_loc, vl);
                    let il = i_loc[k];
                    // voltage behind the interface branch, in the rotor frame
                    let e_fb = vl + sg.r_iface * il + sg.l_iface * (di + J * st.omega * il);
                    let s = power_from_space(e_fb, il);
                    let fb = SgFeedback { q: s.im, e_mag: e_fb.norm() };
                    let r = sg_rhs_with(&sg.params, &sg.map, &st, vl, fb, self.omega_s);
                    dx[slot.states.clone()].copy_from_slice(&r.d.to_array());
                    e_loc[k] = e_fb;
                    sig.omega[k] = st.omega;
                }
                NodeModel::Source(m) => {
                    let local = LocalSignals { v: vl, i: i_loc[k], e: e_loc[k] };
                    let w = m.rhs(&x[slot.states.clone()], &local, &mut dx[slot.states.clone()]).map_err(res_err(k))?;
                    dx[slot.angle] = w;
                    sig.omega[k] = w;
                    let at = slot.current.expect("sources own an interface current");
                    let (r, l) = (self.net.r_iface()[k], self.net.l_iface()[k]);
                    if self.layout.width == 3 {
                        let e_abc = dq_to_abc_source(e_loc[k].norm(), e_loc[k].arg(), phi[k]);
                        let v_abc = space_to_abc(&SpacePhasor(v[k]));
                        for ph in 0..3 {
                            dx[at + ph] = (e_abc.as_array()[ph] - v_abc.as_array()[ph] - r * x[at + ph]) / l;
                        }
                    } else {
                        self.put_phasor(dx, at, a[k] + apply(&gain[k], v[k]));
                    }
                }
            }
            let s = power_from_space(e_loc[k], i_loc[k]);
            sig.p[k] = s.re;
            sig.q[k] = s.im;
            sig.e_mag[k] = e_loc[k].norm();
            sig.delta[k] = e_loc[k].arg();
            sig.e[k] = e_loc[k] * Complex64::from_polar(1.0, phi[k]);
        }

        if let Some(start) = self.layout.lines {
            let drops = self.net.across(&v);
            for e in 0..self.net.n_edges() {
                let (r, l) = (self.net.r_line()[e], self.net.l_line()[e]);
                let at = start + e * self.layout.width;
                if self.layout.width == 3 {
                    let d_abc = space_to_abc(&SpacePhasor(drops[e])).as_array();
                    for ph in 0..3 {
                        dx[at + ph] = (d_abc[ph] - r * x[at + ph]) / l;
                    }
                } else {
                    self.put_phasor(dx, at, (drops[e] - (r + J * w_fr * l) * f[e]) / l);
                }
            }
        }

        if let Some(k) = dx.iter().position(|d| !d.is_finite()) {
            return Err(SimError::NonFinite { t, state: self.layout.names[k].clone() });
        }
        Ok(sig)
    }

    /// Node voltages with line currents as states: the time derivative of
    /// KCL gives `(K - B L^-1 B^T) V = -a - B L^-1 (R + j w L) F`.
    fn solve_dynamic_lines(
        &self,
        a: &[Complex64],
        gain: &[Matrix2<f64>],
        f: &[Complex64],
        t: f64,
    ) -> Result<Vec<Complex64>, SimError> {
        let n = a.len();
        let w_fr = self.frame_frequency();
        let mut m = DMatrix::<f64>::zeros(2 * n, 2 * n);
        let mut rhs = DVector::<f64>::zeros(2 * n);
        for k in 0..n {
            m.fixed_view_mut::<2, 2>(2 * k, 2 * k).copy_from(&gain[k]);
            rhs[2 * k] = -a[k].re;
            rhs[2 * k + 1] = -a[k].im;
            for c in 0..n {
                let w = self.lap_inv_l[(k, c)];
                m[(2 * k, 2 * c)] -= w;
                m[(2 * k + 1, 2 * c + 1)] -= w;
            }
        }
        if !f.is_empty() {
            let drive: Vec<Complex64> = f
                .iter()
                .enumerate()
                .map(|(e, fe)| (self.net.r_line()[e] / self.net.l_line()[e] + J * w_fr) * fe)
                .collect();
            let g = self.net.gather(&drive);
            for k in 0..n {
                rhs[2 * k] -= g[k].re;
                rhs[2 * k + 1] -= g[k].im;
            }
        }
        let sol = m.lu().solve(&rhs).ok_or(SimError::Singular { t, context: "node-voltage solve" })?;
        Ok((0..n).map(|k| Complex64::new(sol[2 * k], sol[2 * k + 1])).collect())
    }

    /// Node voltages with lines in sinusoidal steady state at the synchronous
    /// frequency: `I = Y_lines V`. The line admittance is singular along the
    /// common mode, which is fixed by requiring the injections to keep
    /// summing to zero.
    fn solve_algebraic_lines(
        &self,
        a: &[Complex64],
        gain: &[Matrix2<f64>],
        cur: &[Complex64],
        t: f64,
    ) -> Result<Vec<Complex64>, SimError> {
        let n = a.len();
        let y = crate::network::admittance_lines(&self.net, self.omega_s).y;
        let mut m = DMatrix::<Complex64>::zeros(n + 1, n + 1);
        let mut rhs = DVector::<Complex64>::zeros(n + 1);
        for r in 0..n {
            for c in 0..n {
                m[(r, c)] = y[(r, c)];
            }
            m[(r, n)] = Complex64::new(1.0, 0.0);
            m[(n, r)] = Complex64::new(1.0, 0.0);
            rhs[r] = cur[r];
        }
        let sol = m.lu().solve(&rhs).ok_or(SimError::Singular { t, context: "line admittance solve" })?;
        let vp: Vec<Complex64> = (0..n).map(|k| sol[k]).collect();
        let mut k_sum = Matrix2::zeros();
        let mut drift = Complex64::default();
        for k in 0..n {
            k_sum += gain[k];
            drift += a[k] + apply(&gain[k], vp[k]);
        }
        let c = k_sum
            .try_inverse()
            .map(|inv| apply(&inv, -drift))
            .ok_or(SimError::Singular { t, context: "common-mode voltage" })?;
        Ok(vp.into_iter().map(|v| v + c).collect())
    }

    /// Flat start: resources at their own rest points, no current anywhere.
    pub fn flat_start(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        for (k, node) in self.nodes.iter().enumerate() {
            let slot = &self.layout.nodes[k];
            match node {
                NodeModel::Sg(sg) => {
                    let st = sg_flat_start(&sg.params, &sg.map, self.omega_s);
                    x[slot.states.clone()].copy_from_slice(&st.to_array());
                }
                NodeModel::Source(m) => {
                    x[slot.states.clone()].copy_from_slice(&m.flat_start());
                }
            }
        }
        x
    }

    /// State reproducing a phasor solution at `t = 0`.
    pub fn steady_start(&self, sol: &PhasorSolution) -> Result<Vec<f64>, SimError> {
        let n = self.net.n_nodes();
        if sol.e.len() != n || sol.f.len() != self.net.n_edges() {
            return Err(SimError::Config("phasor solution does not match the network".into()));
        }
        let scale = 1.0 / crate::frames::rms_ratio::<f64>();
        let mut x = vec![0.0; self.dim()];
        for (k, node) in self.nodes.iter().enumerate() {
            let slot = &self.layout.nodes[k];
            let (e, i, v) = (sol.e[k] * scale, sol.i[k] * scale, sol.v[k] * scale);
            match node {
                NodeModel::Sg(sg) => {
                    let (st, _) = sg_equilibrium(&sg.params, &sg.map, v, i, sol.omega_ss);
                    x[slot.states.clone()].copy_from_slice(&st.to_array());
                }
                NodeModel::Source(m) => {
                    let (xs, angle) =
                        m.steady_start(e, i, v, sol.omega_ss).map_err(|source| SimError::Resource { node: k, source })?;
                    x[slot.states.clone()].copy_from_slice(&xs);
                    x[slot.angle] = angle;
                    let at = slot.current.expect("sources own an interface current");
                    self.put_phasor(&mut x, at, i);
                }
            }
        }
        if let Some(start) = self.layout.lines {
            for (e, fe) in sol.f.iter().enumerate() {
                self.put_phasor(&mut x, start + e * self.layout.width, fe * scale);
            }
        }
        Ok(x)
    }
}
