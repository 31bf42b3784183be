//! Case files: network, one resource per node, base quantities and run
//! defaults, in TOML with unit-suffixed keys.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{NetworkError, NetworkSpec};
use crate::resources::{GflParams, GfmFlavor, GfmParams, ResourceError, SgParams};
use crate::sim::{InitMode, Integrator, ModelKind, NodeResource, SimConfig, SimError, SteadyDetect, System};
use crate::steady::{PowerFlowCase, SolverOptions, SteadyError};

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema violation at `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("every node hosts exactly one resource: {0}")]
    Hosting(String),
    #[error("network: {0}")]
    Network(#[from] NetworkError),
    #[error("resource at node {node}: {source}")]
    Resource { node: usize, source: ResourceError },
}

impl CaseError {
    fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        CaseError::Schema { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCase {
    name: Option<String>,
    base: RawBase,
    network: RawNetwork,
    resources: Vec<RawResource>,
    #[serde(default)]
    sim: RawSim,
    #[serde(default)]
    powerflow: RawPowerFlow,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBase {
    omega_s_rad_s: f64,
    power_va: Option<f64>,
    voltage_v: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    nodes: Vec<RawNode>,
    #[serde(default)]
    edges: Vec<RawEdge>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: usize,
    r_iface_ohm: f64,
    l_iface_h: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    from: usize,
    to: usize,
    r_ohm: f64,
    l_h: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct RawResource {
    node: usize,
    kind: String,
    #[serde(flatten)]
    params: toml::Table,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SgEntry {
    r_ohm: f64,
    r_f_ohm: f64,
    r_1_ohm: f64,
    r_2_ohm: f64,
    l_ls_h: f64,
    l_sf_h: f64,
    l_s1_h: f64,
    l_s2_h: f64,
    l_f1_h: f64,
    l_ff_h: f64,
    l_11_h: f64,
    l_22_h: f64,
    l_a_h: f64,
    l_b_h: f64,
    poles: u32,
    inertia_kg_m2: f64,
    windage_n_m_s: f64,
    tau_e_s: f64,
    tau_u_s: f64,
    tau_r_s: f64,
    kappa_e: f64,
    kappa_a: f64,
    kappa_s: f64,
    kappa_c: f64,
    tau_m_s: f64,
    tau_s_s: f64,
    kappa_p: f64,
    r_droop_rad_s_per_w: f64,
    p_star_w: f64,
    e_star_v: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GflEntry {
    k_p_current: f64,
    k_i_current: f64,
    k_p_pll: f64,
    k_i_pll: f64,
    k_p_power: f64,
    k_i_power: f64,
    p_star_w: f64,
    q_star_var: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GfmEntry {
    flavor: GfmFlavor,
    tau_p_s: f64,
    p_star_w: f64,
    q_star_var: f64,
    e_star_v: f64,
    m_p_rad_s_per_w: Option<f64>,
    m_q_v_per_var: Option<f64>,
    inertia: Option<f64>,
    damping: Option<f64>,
    k_p_pll: Option<f64>,
    k_i_pll: Option<f64>,
    k1: Option<f64>,
    k2: Option<f64>,
    // explicit generic parameters, checked against the flavor's bindings
    tau_f_s: Option<f64>,
    tau_e_s: Option<f64>,
    kappa_d: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    t_end_s: Option<f64>,
    dt_s: Option<f64>,
    integrator: Option<Integrator>,
    record_stride: Option<usize>,
    init: Option<InitMode>,
    steady_window_s: Option<f64>,
    steady_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPowerFlow {
    reference: Option<usize>,
    tolerance: Option<f64>,
    max_iterations: Option<usize>,
}

/// Run defaults from the case file; unset fields fall back to the
/// per-model defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimDefaults {
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
    pub integrator: Option<Integrator>,
    pub record_stride: Option<usize>,
    pub init: Option<InitMode>,
    pub steady_window: Option<f64>,
    pub steady_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowDefaults {
    pub reference: Option<usize>,
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
}

/// Display bases; all internal quantities are SI.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Bases {
    pub power_va: Option<f64>,
    pub voltage_v: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Case {
    pub name: Option<String>,
    pub omega_s: f64,
    pub bases: Bases,
    pub network: NetworkSpec,
    /// Indexed by node.
    pub resources: Vec<NodeResource>,
    pub sim: SimDefaults,
    pub powerflow: PowerFlowDefaults,
}

fn entry<T: serde::de::DeserializeOwned>(node: usize, table: toml::Table) -> Result<T, CaseError> {
    T::deserialize(toml::Value::Table(table))
        .map_err(|e| CaseError::schema(format!("resources[node = {node}]"), e.to_string().trim().to_string()))
}

fn require(node: usize, name: &str, x: Option<f64>, flavor: &str) -> Result<f64, CaseError> {
    x.ok_or_else(|| {
        CaseError::schema(format!("resources[node = {node}].{name}"), format!("required for flavor `{flavor}`"))
    })
}

fn forbid(node: usize, flavor: &str, fields: &[(&str, bool)]) -> Result<(), CaseError> {
    match fields.iter().find(|(_, set)| *set) {
        Some((name, _)) => Err(CaseError::schema(
            format!("resources[node = {node}].{name}"),
            format!("not a parameter of flavor `{flavor}`"),
        )),
        None => Ok(()),
    }
}

fn gfm_params(node: usize, g: GfmEntry) -> Result<GfmParams, CaseError> {
    let flavor = g.flavor.name();
    let mut p = match g.flavor {
        GfmFlavor::Droop | GfmFlavor::Vsm => {
            forbid(node, flavor, &[("k1", g.k1.is_some()), ("k2", g.k2.is_some())])?;
            let m_p = require(node, "m_p_rad_s_per_w", g.m_p_rad_s_per_w, flavor)?;
            let m_q = require(node, "m_q_v_per_var", g.m_q_v_per_var, flavor)?;
            if g.flavor == GfmFlavor::Droop {
                forbid(
                    node,
                    flavor,
                    &[
                        ("inertia", g.inertia.is_some()),
                        ("damping", g.damping.is_some()),
                        ("k_p_pll", g.k_p_pll.is_some()),
                        ("k_i_pll", g.k_i_pll.is_some()),
                    ],
                )?;
                GfmParams::droop(m_p, m_q, g.tau_p_s, g.p_star_w, g.q_star_var, g.e_star_v)
            } else {
                GfmParams::vsm(
                    m_p,
                    m_q,
                    require(node, "inertia", g.inertia, flavor)?,
                    require(node, "damping", g.damping, flavor)?,
                    g.tau_p_s,
                    g.k_p_pll.unwrap_or(0.0),
                    g.k_i_pll.unwrap_or(0.0),
                    g.p_star_w,
                    g.q_star_var,
                    g.e_star_v,
                )
            }
        }
        GfmFlavor::Dvoc => {
            forbid(
                node,
                flavor,
                &[
                    ("m_p_rad_s_per_w", g.m_p_rad_s_per_w.is_some()),
                    ("m_q_v_per_var", g.m_q_v_per_var.is_some()),
                    ("inertia", g.inertia.is_some()),
                    ("damping", g.damping.is_some()),
                ],
            )?;
            GfmParams::dvoc(
                require(node, "k1", g.k1, flavor)?,
                require(node, "k2", g.k2, flavor)?,
                g.tau_p_s,
                g.p_star_w,
                g.q_star_var,
                g.e_star_v,
            )
        }
    };
    if let Some(x) = g.tau_f_s {
        p.tau_f = x;
    }
    if let Some(x) = g.tau_e_s {
        p.tau_e = x;
    }
    if let Some(x) = g.kappa_d {
        p.kappa_d = x;
    }
    Ok(p)
}

fn resource(raw: RawResource) -> Result<NodeResource, CaseError> {
    let node = raw.node;
    let res = match raw.kind.as_str() {
        "sg" => {
            let s: SgEntry = entry(node, raw.params)?;
            NodeResource::Sg(SgParams {
                r: s.r_ohm,
                r_f: s.r_f_ohm,
                r_1: s.r_1_ohm,
                r_2: s.r_2_ohm,
                l_ls: s.l_ls_h,
                l_sf: s.l_sf_h,
                l_s1: s.l_s1_h,
                l_s2: s.l_s2_h,
                l_f1: s.l_f1_h,
                l_ff: s.l_ff_h,
                l_11: s.l_11_h,
                l_22: s.l_22_h,
                l_a: s.l_a_h,
                l_b: s.l_b_h,
                poles: s.poles,
                inertia: s.inertia_kg_m2,
                windage: s.windage_n_m_s,
                tau_e: s.tau_e_s,
                tau_u: s.tau_u_s,
                tau_r: s.tau_r_s,
                kappa_e: s.kappa_e,
                kappa_a: s.kappa_a,
                kappa_s: s.kappa_s,
                kappa_c: s.kappa_c,
                tau_m: s.tau_m_s,
                tau_s: s.tau_s_s,
                kappa_p: s.kappa_p,
                r_droop: s.r_droop_rad_s_per_w,
                p_star: s.p_star_w,
                e_star: s.e_star_v,
            })
        }
        "gfl" => {
            let g: GflEntry = entry(node, raw.params)?;
            NodeResource::Gfl(GflParams {
                k_p_current: g.k_p_current,
                k_i_current: g.k_i_current,
                k_p_pll: g.k_p_pll,
                k_i_pll: g.k_i_pll,
                k_p_power: g.k_p_power,
                k_i_power: g.k_i_power,
                s_star: Complex64::new(g.p_star_w, g.q_star_var),
            })
        }
        "gfm" => NodeResource::Gfm(gfm_params(node, entry(node, raw.params)?)?),
        other => {
            return Err(CaseError::schema(
                format!("resources[node = {node}].kind"),
                format!("unknown kind `{other}`, expected one of sg, gfl, gfm"),
            ))
        }
    };
    let checked = match &res {
        NodeResource::Sg(p) => p.validate(),
        NodeResource::Gfl(p) => p.validate(),
        NodeResource::Gfm(p) => p.validate(),
        NodeResource::Custom(_) => Ok(()),
    };
    checked.map_err(|source| CaseError::Resource { node, source })?;
    Ok(res)
}

/// Parses and validates a case from TOML text.
pub fn parse_case(text: &str) -> Result<Case, CaseError> {
    let raw: RawCase = toml::from_str(text).map_err(|e| CaseError::Parse(e.to_string().trim_end().to_string()))?;
    if !(raw.base.omega_s_rad_s > 0.0 && raw.base.omega_s_rad_s.is_finite()) {
        return Err(CaseError::schema("base.omega_s_rad_s", "must be positive"));
    }
    let n = raw.network.nodes.len();
    let mut r_iface = vec![0.0; n];
    let mut l_iface = vec![0.0; n];
    let mut seen = vec![false; n];
    for node in &raw.network.nodes {
        if node.id >= n || seen[node.id] {
            return Err(CaseError::schema(
                "network.nodes",
                format!("node ids must be 0..{} without repeats, found {}", n, node.id),
            ));
        }
        seen[node.id] = true;
        r_iface[node.id] = node.r_iface_ohm;
        l_iface[node.id] = node.l_iface_h;
    }
    let edges = raw.network.edges.iter().map(|e| (e.from, e.to)).collect();
    let network = NetworkSpec::new(
        n,
        edges,
        raw.network.edges.iter().map(|e| e.r_ohm).collect(),
        raw.network.edges.iter().map(|e| e.l_h).collect(),
        r_iface,
        l_iface,
    )?;

    let mut slots: Vec<Option<NodeResource>> = vec![None; n];
    for r in raw.resources {
        let node = r.node;
        if node >= n {
            return Err(CaseError::Hosting(format!("resource names node {node}, but the network has {n} nodes")));
        }
        if slots[node].is_some() {
            return Err(CaseError::Hosting(format!("node {node} has more than one resource")));
        }
        slots[node] = Some(resource(r)?);
    }
    let resources = slots
        .into_iter()
        .enumerate()
        .map(|(k, r)| r.ok_or_else(|| CaseError::Hosting(format!("node {k} has none"))))
        .collect::<Result<Vec<_>, _>>()?;

    if let Some(r) = raw.powerflow.reference {
        if r >= n {
            return Err(CaseError::schema("powerflow.reference", format!("node {r} does not exist")));
        }
    }
    Ok(Case {
        name: raw.name,
        omega_s: raw.base.omega_s_rad_s,
        bases: Bases { power_va: raw.base.power_va, voltage_v: raw.base.voltage_v },
        network,
        resources,
        sim: SimDefaults {
            t_end: raw.sim.t_end_s,
            dt: raw.sim.dt_s,
            integrator: raw.sim.integrator,
            record_stride: raw.sim.record_stride,
            init: raw.sim.init,
            steady_window: raw.sim.steady_window_s,
            steady_tol: raw.sim.steady_tol,
        },
        powerflow: PowerFlowDefaults {
            reference: raw.powerflow.reference,
            tolerance: raw.powerflow.tolerance,
            max_iterations: raw.powerflow.max_iterations,
        },
    })
}

pub fn load_case(path: impl AsRef<Path>) -> Result<Case, CaseError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| CaseError::Io { path: path.display().to_string(), source })?;
    parse_case(&text)
}

impl Case {
    pub fn assemble(&self, model: ModelKind) -> Result<System, SimError> {
        System::new(self.network.clone(), self.resources.clone(), self.omega_s, model)
    }

    /// Run configuration from the case defaults, falling back to the
    /// per-model defaults.
    pub fn sim_config(&self, model: ModelKind) -> SimConfig {
        let d = &self.sim;
        let mut c = SimConfig::for_model(model, d.t_end.unwrap_or(1.0));
        if let Some(x) = d.dt {
            c.dt = x;
        }
        if let Some(x) = d.integrator {
            c.integrator = x;
        }
        if let Some(x) = d.record_stride {
            c.record_stride = x;
        }
        if d.steady_window.is_some() || d.steady_tol.is_some() {
            let def = SteadyDetect::default();
            c.steady_detect = Some(SteadyDetect {
                window: d.steady_window.unwrap_or(def.window),
                tol: d.steady_tol.unwrap_or(def.tol),
                stop: false,
            });
        }
        c
    }

    pub fn init_mode(&self) -> InitMode {
        self.sim.init.unwrap_or(InitMode::Flat)
    }

    pub fn power_flow_case(&self) -> Result<PowerFlowCase, SteadyError> {
        let buses = self
            .resources
            .iter()
            .map(|r| r.bus_model().expect("case files only hold built-in resources"))
            .collect();
        let mut pf = match self.powerflow.reference {
            Some(r) => PowerFlowCase::with_reference(self.network.clone(), buses, self.omega_s, r)?,
            None => PowerFlowCase::new(self.network.clone(), buses, self.omega_s)?,
        };
        let def = SolverOptions::default();
        pf.options = SolverOptions {
            max_iterations: self.powerflow.max_iterations.unwrap_or(def.max_iterations),
            tolerance: self.powerflow.tolerance.unwrap_or(def.tolerance),
        };
        Ok(pf)
    }
}
