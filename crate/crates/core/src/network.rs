//! RL network: topology, the per-phase (abc) and synchronous-frame (DQ)
//! current dynamics, and the sinusoidal steady-state admittance algebra.
//!
//! Every node connects its resource through an interface branch
//! `(r_iface, l_iface)`; lines connect nodes. Currents `i` flow out of
//! resources into the network, line currents `f` flow from tail to head.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

const J: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("network must have at least one node")]
    Empty,
    #[error("line {edge} connects node {node} to itself")]
    SelfLoop { edge: usize, node: usize },
    #[error("line {edge} references node {node} but the network has {n_nodes} nodes")]
    NodeOutOfRange { edge: usize, node: usize, n_nodes: usize },
    #[error("{what} has {got} entries, expected {expected}")]
    Length { what: &'static str, got: usize, expected: usize },
    #[error("{element}: inductance must be strictly positive, got {value}")]
    NonPositiveInductance { element: String, value: f64 },
    #[error("{element}: resistance must be non-negative and finite, got {value}")]
    BadResistance { element: String, value: f64 },
    #[error("network is not connected: node {node} is unreachable from node 0")]
    Disconnected { node: usize },
    #[error("singular linear system while {context}")]
    Singular { context: &'static str },
    #[error("frequency must be positive, got {0}")]
    BadFrequency(f64),
}

/// Topology plus diagonal line and interface parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    r_line: Vec<f64>,
    l_line: Vec<f64>,
    r_iface: Vec<f64>,
    l_iface: Vec<f64>,
    b: DMatrix<f64>,
}

/// Node-to-edge incidence: `+1` at the tail, `-1` at the head.
pub fn incidence(n_nodes: usize, edges: &[(usize, usize)]) -> Result<DMatrix<i32>, NetworkError> {
    let mut b = DMatrix::zeros(n_nodes, edges.len());
    for (k, &(from, to)) in edges.iter().enumerate() {
        for node in [from, to] {
            if node >= n_nodes {
                return Err(NetworkError::NodeOutOfRange { edge: k, node, n_nodes });
            }
        }
        if from == to {
            return Err(NetworkError::SelfLoop { edge: k, node: from });
        }
        b[(from, k)] = 1;
        b[(to, k)] = -1;
    }
    Ok(b)
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<(), NetworkError> {
    if got != expected {
        return Err(NetworkError::Length { what, got, expected });
    }
    Ok(())
}

fn check_branch(element: String, r: f64, l: f64) -> Result<(), NetworkError> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(NetworkError::NonPositiveInductance { element, value: l });
    }
    if !(r >= 0.0 && r.is_finite()) {
        return Err(NetworkError::BadResistance { element, value: r });
    }
    Ok(())
}

impl NetworkSpec {
    pub fn new(
        n_nodes: usize,
        edges: Vec<(usize, usize)>,
        r_line: Vec<f64>,
        l_line: Vec<f64>,
        r_iface: Vec<f64>,
        l_iface: Vec<f64>,
    ) -> Result<Self, NetworkError> {
        if n_nodes == 0 {
            return Err(NetworkError::Empty);
        }
        check_len("r_line", r_line.len(), edges.len())?;
        check_len("l_line", l_line.len(), edges.len())?;
        check_len("r_iface", r_iface.len(), n_nodes)?;
        check_len("l_iface", l_iface.len(), n_nodes)?;
        let b = incidence(n_nodes, &edges)?.map(f64::from);
        for k in 0..edges.len() {
            check_branch(format!("line {k}"), r_line[k], l_line[k])?;
        }
        for n in 0..n_nodes {
            check_branch(format!("interface of node {n}"), r_iface[n], l_iface[n])?;
        }
        let spec = Self { n_nodes, edges, r_line, l_line, r_iface, l_iface, b };
        spec.check_connected()?;
        Ok(spec)
    }

    fn check_connected(&self) -> Result<(), NetworkError> {
        let mut seen = vec![false; self.n_nodes];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(n) = stack.pop() {
            for &(a, b) in &self.edges {
                let other = if a == n { b } else if b == n { a } else { continue };
                if !seen[other] {
                    seen[other] = true;
                    stack.push(other);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(node) => Err(NetworkError::Disconnected { node }),
            None => Ok(()),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn r_line(&self) -> &[f64] {
        &self.r_line
    }

    pub fn l_line(&self) -> &[f64] {
        &self.l_line
    }

    pub fn r_iface(&self) -> &[f64] {
        &self.r_iface
    }

    pub fn l_iface(&self) -> &[f64] {
        &self.l_iface
    }

    /// Incidence matrix as reals.
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn line_impedance(&self, edge: usize, omega: f64) -> Complex64 {
        Complex64::new(self.r_line[edge], omega * self.l_line[edge])
    }

    pub fn iface_impedance(&self, node: usize, omega: f64) -> Complex64 {
        Complex64::new(self.r_iface[node], omega * self.l_iface[node])
    }

    /// `B diag(w) B^T` for per-edge weights.
    pub fn weighted_laplacian(&self, w: &[Complex64]) -> DMatrix<Complex64> {
        let mut y = DMatrix::zeros(self.n_nodes, self.n_nodes);
        for (k, &(a, b)) in self.edges.iter().enumerate() {
            y[(a, a)] += w[k];
            y[(b, b)] += w[k];
            y[(a, b)] -= w[k];
            y[(b, a)] -= w[k];
        }
        y
    }

    /// Node-to-line map `B^T x`.
    pub fn across(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.edges.iter().map(|&(a, b)| x[a] - x[b]).collect()
    }

    /// Line-to-node map `B f`.
    pub fn gather(&self, f: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.n_nodes];
        for (k, &(a, b)) in self.edges.iter().enumerate() {
            out[a] += f[k];
            out[b] -= f[k];
        }
        out
    }
}

/// abc network state: column `n` holds the three phase values of node/edge `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkStateAbc {
    pub i_abc: DMatrix<f64>,
    pub f_abc: DMatrix<f64>,
    pub v_abc: DMatrix<f64>,
}

impl NetworkStateAbc {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            i_abc: DMatrix::zeros(3, spec.n_nodes()),
            f_abc: DMatrix::zeros(3, spec.n_edges()),
            v_abc: DMatrix::zeros(3, spec.n_nodes()),
        }
    }
}

/// Time derivatives of the current states.
#[derive(Debug, Clone, PartialEq)]
pub struct AbcDerivative {
    pub di: DMatrix<f64>,
    pub df: DMatrix<f64>,
}

pub fn rhs_m1(spec: &NetworkSpec, state: &NetworkStateAbc, e_abc: &DMatrix<f64>) -> AbcDerivative {
    let n = spec.n_nodes();
    let mut di = DMatrix::zeros(3, n);
    for k in 0..n {
        for ph in 0..3 {
            di[(ph, k)] = (e_abc[(ph, k)]
                - state.v_abc[(ph, k)]
                - spec.r_iface[k] * state.i_abc[(ph, k)])
                / spec.l_iface[k];
        }
    }
    let mut df = DMatrix::zeros(3, spec.n_edges());
    for (k, &(a, b)) in spec.edges.iter().enumerate() {
        for ph in 0..3 {
            let drop = state.v_abc[(ph, a)] - state.v_abc[(ph, b)];
            df[(ph, k)] = (drop - spec.r_line[k] * state.f_abc[(ph, k)]) / spec.l_line[k];
        }
    }
    AbcDerivative { di, df }
}

/// Node voltages that keep `i = B f` invariant under the abc dynamics,
/// solved phase by phase.
pub fn solve_node_voltages_m1(
    spec: &NetworkSpec,
    state: &NetworkStateAbc,
    e_abc: &DMatrix<f64>,
) -> Result<DMatrix<f64>, NetworkError> {
    let n = spec.n_nodes();
    let inv_ln: Vec<f64> = spec.l_line.iter().map(|l| 1.0 / l).collect();
    let mut a = spec
        .weighted_laplacian(&inv_ln.iter().map(|&w| Complex64::new(w, 0.0)).collect::<Vec<_>>())
        .map(|z| z.re);
    for k in 0..n {
        a[(k, k)] += 1.0 / spec.l_iface[k];
    }
    let lu = a.lu();
    let mut v = DMatrix::zeros(3, n);
    for ph in 0..3 {
        let mut rhs = DVector::zeros(n);
        for k in 0..n {
            rhs[k] = (e_abc[(ph, k)] - spec.r_iface[k] * state.i_abc[(ph, k)]) / spec.l_iface[k];
        }
        for (k, &(from, to)) in spec.edges.iter().enumerate() {
            let w = spec.r_line[k] * state.f_abc[(ph, k)] * inv_ln[k];
            rhs[from] += w;
            rhs[to] -= w;
        }
        let sol = lu
            .solve(&rhs)
            .ok_or(NetworkError::Singular { context: "resolving abc node voltages" })?;
        for k in 0..n {
            v[(ph, k)] = sol[k];
        }
    }
    Ok(v)
}

/// DQ network state, one complex entry per node or line.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkStateDq {
    pub i_dq: Vec<Complex64>,
    pub f_dq: Vec<Complex64>,
    pub v_dq: Vec<Complex64>,
}

impl NetworkStateDq {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let z = Complex64::new(0.0, 0.0);
        Self {
            i_dq: vec![z; spec.n_nodes()],
            f_dq: vec![z; spec.n_edges()],
            v_dq: vec![z; spec.n_nodes()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DqDerivative {
    pub di: Vec<Complex64>,
    pub df: Vec<Complex64>,
}

/// DQ dynamics in a frame rotating at `omega_frame`.
pub fn rhs_m2(
    spec: &NetworkSpec,
    state: &NetworkStateDq,
    e_dq: &[Complex64],
    omega_frame: f64,
) -> DqDerivative {
    let di = (0..spec.n_nodes())
        .map(|k| {
            let i = state.i_dq[k];
            (e_dq[k] - state.v_dq[k] - spec.iface_impedance(k, omega_frame) * i) / spec.l_iface[k]
        })
        .collect();
    let drops = spec.across(&state.v_dq);
    let df = (0..spec.n_edges())
        .map(|k| (drops[k] - spec.line_impedance(k, omega_frame) * state.f_dq[k]) / spec.l_line[k])
        .collect();
    DqDerivative { di, df }
}

/// Complex analogue of [`solve_node_voltages_m1`] in a frame rotating at
/// `omega_frame`.
pub fn solve_node_voltages_m2(
    spec: &NetworkSpec,
    state: &NetworkStateDq,
    e_dq: &[Complex64],
    omega_frame: f64,
) -> Result<Vec<Complex64>, NetworkError> {
    let n = spec.n_nodes();
    let inv_ln: Vec<Complex64> = spec.l_line.iter().map(|l| Complex64::new(1.0 / l, 0.0)).collect();
    let mut a = spec.weighted_laplacian(&inv_ln);
    let mut rhs = DVector::zeros(n);
    for k in 0..n {
        a[(k, k)] += 1.0 / spec.l_iface[k];
        rhs[k] = (e_dq[k] - spec.iface_impedance(k, omega_frame) * state.i_dq[k]) / spec.l_iface[k];
    }
    for (k, &(from, to)) in spec.edges.iter().enumerate() {
        let w = spec.line_impedance(k, omega_frame) * state.f_dq[k] * inv_ln[k];
        rhs[from] += w;
        rhs[to] -= w;
    }
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or(NetworkError::Singular { context: "resolving DQ node voltages" })?;
    Ok(sol.iter().copied().collect())
}

/// Admittance matrix together with the frequency it was built at.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub y: DMatrix<Complex64>,
    pub frequency: f64,
}

fn check_frequency(omega: f64) -> Result<(), NetworkError> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(NetworkError::BadFrequency(omega));
    }
    Ok(())
}

/// Line-only admittance `B (R + j omega L)^-1 B^T` among the network nodes.
pub fn admittance_lines(spec: &NetworkSpec, omega: f64) -> AdmittanceMatrix {
    let w: Vec<Complex64> = (0..spec.n_edges()).map(|k| spec.line_impedance(k, omega).inv()).collect();
    AdmittanceMatrix { y: spec.weighted_laplacian(&w), frequency: omega }
}

fn iface_diag(spec: &NetworkSpec, omega: f64) -> DMatrix<Complex64> {
    let d: Vec<Complex64> = (0..spec.n_nodes()).map(|k| spec.iface_impedance(k, omega)).collect();
    DMatrix::from_diagonal(&DVector::from_vec(d))
}

/// Admittance seen from the resource terminals (behind the interface
/// branches): `[I + Y_lines Z_iface]^-1 Y_lines`, formed by a linear solve.
pub fn admittance_reduced(spec: &NetworkSpec, omega: f64) -> Result<AdmittanceMatrix, NetworkError> {
    check_frequency(omega)?;
    let y_lines = admittance_lines(spec, omega).y;
    let a = DMatrix::identity(spec.n_nodes(), spec.n_nodes()) + &y_lines * iface_diag(spec, omega);
    let y = a
        .lu()
        .solve(&y_lines)
        .ok_or(NetworkError::Singular { context: "forming the reduced admittance" })?;
    Ok(AdmittanceMatrix { y, frequency: omega })
}

/// Frequency derivative of [`admittance_reduced`].
pub fn admittance_reduced_derivative(
    spec: &NetworkSpec,
    omega: f64,
) -> Result<DMatrix<Complex64>, NetworkError> {
    check_frequency(omega)?;
    let n = spec.n_nodes();
    let y_lines = admittance_lines(spec, omega).y;
    let dw: Vec<Complex64> = (0..spec.n_edges())
        .map(|k| {
            let z = spec.line_impedance(k, omega);
            -J * spec.l_line[k] / (z * z)
        })
        .collect();
    let dy_lines = spec.weighted_laplacian(&dw);
    let z = iface_diag(spec, omega);
    let dz = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        spec.l_iface.iter().map(|&l| J * l),
    ));
    let a = DMatrix::identity(n, n) + &y_lines * &z;
    let lu = a.lu();
    let y = lu
        .solve(&y_lines)
        .ok_or(NetworkError::Singular { context: "forming the reduced admittance" })?;
    let da = &dy_lines * &z + &y_lines * dz;
    lu.solve(&(dy_lines - da * y))
        .ok_or(NetworkError::Singular { context: "differentiating the reduced admittance" })
}

/// Network-side phasors implied by terminal voltages `e` and injections `i`:
/// node voltages `v = e - Z_iface i` and line currents from `B^T v`.
pub fn back_substitute(
    spec: &NetworkSpec,
    e: &[Complex64],
    i: &[Complex64],
    omega: f64,
) -> (Vec<Complex64>, Vec<Complex64>) {
    let v: Vec<Complex64> = (0..spec.n_nodes())
        .map(|k| e[k] - spec.iface_impedance(k, omega) * i[k])
        .collect();
    let drops = spec.across(&v);
    let f = drops
        .iter()
        .enumerate()
        .map(|(k, d)| d / spec.line_impedance(k, omega))
        .collect();
    (v, f)
}

/// Norms of the three steady-state network residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyResidual {
    pub interface: f64,
    pub lines: f64,
    pub kcl: f64,
}

impl SteadyResidual {
    pub fn max(&self) -> f64 {
        self.interface.max(self.lines).max(self.kcl)
    }
}

fn max_norm(x: impl Iterator<Item = Complex64>) -> f64 {
    x.map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn steady_residual_m3(
    spec: &NetworkSpec,
    e: &[Complex64],
    v: &[Complex64],
    i: &[Complex64],
    f: &[Complex64],
    omega_ss: f64,
) -> SteadyResidual {
    let interface = max_norm(
        (0..spec.n_nodes()).map(|k| e[k] - v[k] - spec.iface_impedance(k, omega_ss) * i[k]),
    );
    let drops = spec.across(v);
    let lines = max_norm(
        (0..spec.n_edges()).map(|k| drops[k] - spec.line_impedance(k, omega_ss) * f[k]),
    );
    let bf = spec.gather(f);
    let kcl = max_norm((0..spec.n_nodes()).map(|k| i[k] - bf[k]));
    SteadyResidual { interface, lines, kcl }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const W: f64 = 376.99111843077515;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn path3() -> NetworkSpec {
        NetworkSpec::new(
            3,
            vec![(0, 1), (1, 2)],
            vec![0.1, 0.2],
            vec![1e-3, 2e-3],
            vec![0.05, 0.07, 0.03],
            vec![1e-3, 1.5e-3, 0.8e-3],
        )
        .unwrap()
    }

    #[test]
    fn incidence_examples() {
        let b = incidence(2, &[(0, 1)]).unwrap();
        assert_eq!(b, DMatrix::from_row_slice(2, 1, &[1, -1]));
        assert_eq!(incidence(3, &[]).unwrap().shape(), (3, 0));
        let b = incidence(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(b, DMatrix::from_row_slice(3, 2, &[1, 0, -1, 1, 0, -1]));
        assert_eq!(incidence(2, &[(1, 1)]), Err(NetworkError::SelfLoop { edge: 0, node: 1 }));
    }

    #[test]
    fn validation_names_element() {
        let err = NetworkSpec::new(2, vec![(0, 1)], vec![0.1], vec![0.0], vec![0.1; 2], vec![1e-3; 2])
            .unwrap_err();
        assert!(err.to_string().contains("line 0"));
        let err = NetworkSpec::new(3, vec![(0, 1)], vec![0.1], vec![1e-3], vec![0.1; 3], vec![1e-3; 3])
            .unwrap_err();
        assert_eq!(err, NetworkError::Disconnected { node: 2 });
    }

    #[test]
    fn m1_equilibria() {
        let spec = NetworkSpec::new(2, vec![(0, 1)], vec![1.0], vec![1.0], vec![1.0; 2], vec![1.0; 2]).unwrap();
        let mut st = NetworkStateAbc::zeros(&spec);
        st.v_abc = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.5, 0.2, -0.5, -0.7]);
        let d = rhs_m1(&spec, &st, &st.v_abc.clone());
        assert!(d.di.iter().all(|x| *x == 0.0));

        // DC steady state of three series 1-ohm resistances driven by e = (1, 0).
        let mut e = DMatrix::zeros(3, 2);
        e[(0, 0)] = 1.0;
        let mut st = NetworkStateAbc::zeros(&spec);
        let h = 1e-3;
        for _ in 0..20_000 {
            st.v_abc = solve_node_voltages_m1(&spec, &st, &e).unwrap();
            let d = rhs_m1(&spec, &st, &e);
            st.i_abc += d.di * h;
            st.f_abc += d.df * h;
        }
        assert!((st.i_abc[(0, 0)] - 1.0 / 3.0).abs() < 1e-6);
        assert!((st.f_abc[(0, 0)] - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn m1_voltage_examples() {
        let spec = NetworkSpec::new(2, vec![(0, 1)], vec![0.3], vec![2e-3], vec![0.1; 2], vec![1e-3; 2]).unwrap();
        let st = NetworkStateAbc::zeros(&spec);
        let e = DMatrix::from_row_slice(3, 2, &[1.0, -1.0, 0.0, 0.0, -1.0, 1.0]);
        let v = solve_node_voltages_m1(&spec, &st, &e).unwrap();
        assert!((v[(0, 0)] + v[(0, 1)]).abs() < 1e-14);
        // zero-current reduction
        let a = DMatrix::from_row_slice(2, 2, &[1e3 + 500.0, -500.0, -500.0, 1e3 + 500.0]);
        let want = a.lu().solve(&DVector::from_vec(vec![1e3, -1e3])).unwrap();
        assert!((v[(0, 0)] - want[0]).abs() < 1e-12);
    }

    #[test]
    fn m1_voltages_keep_kcl_invariant() {
        let spec = path3();
        let mut st = NetworkStateAbc::zeros(&spec);
        st.i_abc = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, -3.0, -0.5, 0.1, 0.4, -0.5, -2.1, 2.6]);
        st.f_abc = DMatrix::from_row_slice(3, 2, &[0.7, -0.2, 0.3, 0.1, -1.0, 0.1]);
        let e = DMatrix::from_row_slice(3, 3, &[10.0, 9.0, 8.0, -5.0, -4.0, -3.0, -5.0, -5.0, -5.0]);
        st.v_abc = solve_node_voltages_m1(&spec, &st, &e).unwrap();
        let d = rhs_m1(&spec, &st, &e);
        let bdf = spec.b() * d.df.transpose();
        let resid = (d.di.transpose() - bdf).abs().max();
        assert!(resid < 1e-10 * d.di.abs().max().max(1.0));
    }

    #[test]
    fn m2_equilibrium_and_zero() {
        let spec = path3();
        let i = vec![c(1.0, 0.5), c(-0.4, 0.2), c(-0.6, -0.7)];
        let (v, f) = {
            let y = admittance_lines(&spec, W).y;
            // pick v consistent with i: solve the grounded system with v[2] = 0
            let sub = y.view((0, 0), (2, 2)).into_owned();
            let vv = sub.lu().solve(&DVector::from_vec(vec![i[0], i[1]])).unwrap();
            let v = vec![vv[0], vv[1], c(0.0, 0.0)];
            let drops = spec.across(&v);
            let f: Vec<_> = drops.iter().enumerate().map(|(k, d)| d / spec.line_impedance(k, W)).collect();
            (v, f)
        };
        let e: Vec<_> = (0..3).map(|k| v[k] + spec.iface_impedance(k, W) * i[k]).collect();
        let st = NetworkStateDq { i_dq: i, f_dq: f, v_dq: v };
        let d = rhs_m2(&spec, &st, &e, W);
        assert!(d.di.iter().chain(d.df.iter()).all(|z| z.norm() < 1e-10));
        let z = NetworkStateDq::zeros(&spec);
        let d = rhs_m2(&spec, &z, &[c(0.0, 0.0); 3], W);
        assert!(d.di.iter().chain(d.df.iter()).all(|z| z.norm() == 0.0));
    }

    #[test]
    fn two_node_admittance() {
        let spec = NetworkSpec::new(2, vec![(0, 1)], vec![0.4], vec![3e-3], vec![0.0; 2], vec![1e-12; 2]).unwrap();
        let y = admittance_reduced(&spec, W).unwrap().y;
        let g = 1.0 / c(0.4, W * 3e-3);
        let want = DMatrix::from_row_slice(2, 2, &[g, -g, -g, g]);
        assert!((y - want).iter().all(|z| z.norm() < 1e-9));
        let a = admittance_reduced(&path3(), W).unwrap();
        let b = admittance_reduced(&path3(), W).unwrap();
        assert_eq!(a, b);
        assert!(admittance_reduced(&path3(), 0.0).is_err());
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let spec = path3();
        let h = 1e-4;
        let fd = (admittance_reduced(&spec, W + h).unwrap().y - admittance_reduced(&spec, W - h).unwrap().y)
            / c(2.0 * h, 0.0);
        let an = admittance_reduced_derivative(&spec, W).unwrap();
        let scale = an.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!((fd - an).iter().all(|z| z.norm() < 1e-6 * scale));
    }

    #[test]
    fn steady_residual_examples() {
        let spec = path3();
        let e = vec![c(100.0, 5.0), c(98.0, -3.0), c(97.0, 1.0)];
        let y = admittance_reduced(&spec, W).unwrap().y;
        let i: Vec<_> = (&y * DVector::from_vec(e.clone())).iter().copied().collect();
        let (v, f) = back_substitute(&spec, &e, &i, W);
        let r = steady_residual_m3(&spec, &e, &v, &i, &f, W);
        assert!(r.max() < 1e-10, "{r:?}");
        let z = vec![c(0.0, 0.0); 3];
        let r = steady_residual_m3(&spec, &z, &z, &z, &[c(0.0, 0.0); 2], W);
        assert_eq!(r.max(), 0.0);
        let mut vp = v.clone();
        vp[1] += c(1e-3, 0.0);
        let r = steady_residual_m3(&spec, &e, &vp, &i, &f, W);
        assert!((r.interface - 1e-3).abs() < 1e-9);
    }

    fn spec_strategy() -> impl Strategy<Value = NetworkSpec> {
        (
            prop::collection::vec((0.0..1.0f64, 1e-4..1e-2f64), 4),
            prop::collection::vec((0.0..0.5f64, 1e-4..5e-3f64), 5),
            prop::collection::vec(any::<bool>(), 6),
        )
            .prop_map(|(lines, ifaces, extra)| {
                // spanning path plus a random subset of chords
                let mut edges = vec![(0, 1), (1, 2), (2, 3), (3, 4)];
                let chords = [(0, 2), (1, 3), (2, 4), (0, 4), (0, 3), (1, 4)];
                for (k, on) in extra.iter().enumerate() {
                    if *on {
                        edges.push(chords[k]);
                    }
                }
                let mut r_line: Vec<f64> = lines.iter().map(|x| x.0).collect();
                let mut l_line: Vec<f64> = lines.iter().map(|x| x.1).collect();
                while r_line.len() < edges.len() {
                    r_line.push(0.1 + 0.01 * r_line.len() as f64);
                    l_line.push(1e-3 * (1.0 + r_line.len() as f64));
                }
                NetworkSpec::new(
                    5,
                    edges,
                    r_line,
                    l_line,
                    ifaces.iter().map(|x| x.0).collect(),
                    ifaces.iter().map(|x| x.1).collect(),
                )
                .unwrap()
            })
    }

    proptest! {
        #[test]
        fn line_admittance_is_laplacian(spec in spec_strategy(), w in 1.0..1e3f64) {
            let y = admittance_lines(&spec, w).y;
            let ones = DVector::from_element(5, c(1.0, 0.0));
            prop_assert!((&y * ones).iter().all(|z| z.norm() < 1e-12 * y.iter().map(|z| z.norm()).fold(1.0, f64::max)));
            prop_assert!((&y - y.transpose()).iter().all(|z| z.norm() == 0.0));
        }

        #[test]
        fn reduced_admittance_reproduces_m3(spec in spec_strategy(), w in 100.0..500.0f64,
                                             e in prop::collection::vec((-200.0..200.0f64, -200.0..200.0f64), 5)) {
            let e: Vec<_> = e.into_iter().map(|(a, b)| c(a, b)).collect();
            let y = admittance_reduced(&spec, w).unwrap().y;
            let i: Vec<_> = (&y * DVector::from_vec(e.clone())).iter().copied().collect();
            let (v, f) = back_substitute(&spec, &e, &i, w);
            let r = steady_residual_m3(&spec, &e, &v, &i, &f, w);
            let scale = e.iter().map(|z| z.norm()).fold(1.0, f64::max);
            prop_assert!(r.max() < 1e-10 * scale, "{:?}", r);
        }

        #[test]
        fn m2_voltages_keep_kcl_invariant(spec in spec_strategy(),
                                          x in prop::collection::vec(-10.0..10.0f64, 30)) {
            let z = |k: usize| c(x[2 * k], x[2 * k + 1]);
            let ne = spec.n_edges();
            let f: Vec<_> = (0..ne).map(z).collect();
            let mut st = NetworkStateDq::zeros(&spec);
            st.i_dq = spec.gather(&f);
            st.f_dq = f;
            let e: Vec<_> = (0..5).map(|k| z(ne + k) * 10.0).collect();
            st.v_dq = solve_node_voltages_m2(&spec, &st, &e, W).unwrap();
            let d = rhs_m2(&spec, &st, &e, W);
            let bdf = spec.gather(&d.df);
            let scale = d.di.iter().map(|z| z.norm()).fold(1.0, f64::max);
            prop_assert!((0..5).all(|k| (d.di[k] - bdf[k]).norm() < 1e-9 * scale));
        }
    }
}
