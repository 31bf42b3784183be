//! JSON form of a power-flow solution. Phasors are RMS, as `[re, im]` pairs,
//! in the frame that puts the reference resource's terminal voltage at zero
//! angle.

use netdyn::frames::rms_ratio;
use netdyn::steady::{bus_residual, PhasorSolution, PowerFlowCase, PowerFlowModel};
use netdyn::{Case, SteadyError};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// Scaled Newton residual at the last iterate.
    pub newton_scaled: f64,
    pub bus_power_w: f64,
    pub bus_voltage_v_rms: f64,
    pub network_interface_v_rms: f64,
    pub network_lines_v_rms: f64,
    pub network_kcl_a_rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerUnit {
    pub p_pu: f64,
    pub q_pu: f64,
    pub e_mag_pu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub node: usize,
    pub kind: String,
    pub e_mag_v_rms: f64,
    pub delta_rad: f64,
    pub p_w: f64,
    pub q_var: f64,
    pub e_v_rms: [f64; 2],
    pub i_a_rms: [f64; 2],
    pub v_v_rms: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_unit: Option<PerUnit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub edge: usize,
    pub from: usize,
    pub to: usize,
    pub f_a_rms: [f64; 2],
}

/// Voltage differences against the solution of the other model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub against: String,
    pub against_omega_ss_rad_s: f64,
    pub delta_e_v_rms: Vec<f64>,
    pub max_delta_e_v_rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub case: Option<String>,
    pub model: String,
    pub reference_node: usize,
    pub omega_s_rad_s: f64,
    pub omega_ss_rad_s: f64,
    pub iterations: usize,
    pub residuals: Residuals,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
}

pub fn model_name(model: PowerFlowModel) -> &'static str {
    match model {
        PowerFlowModel::M3 => "m3",
        PowerFlowModel::M3Prime => "m3p",
    }
}

fn pair(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

fn complex(p: [f64; 2]) -> Complex64 {
    Complex64::new(p[0], p[1])
}

/// Residuals of `sol` evaluated independently of the solver.
pub fn residuals(pf: &PowerFlowCase, sol: &PhasorSolution) -> Result<Residuals, SteadyError> {
    let (power, volt) = bus_residual(pf, &sol.e, &sol.p, &sol.q, sol.omega_ss, sol.model)?;
    let net = sol.network_residual(&pf.network, pf.omega_s);
    Ok(Residuals {
        newton_scaled: sol.residual,
        bus_power_w: power,
        bus_voltage_v_rms: volt,
        network_interface_v_rms: net.interface,
        network_lines_v_rms: net.lines,
        network_kcl_a_rms: net.kcl,
    })
}

impl SolutionFile {
    pub fn new(case: &Case, pf: &PowerFlowCase, sol: &PhasorSolution) -> Result<Self, SteadyError> {
        // The voltage base is a space-phasor magnitude, like the setpoints.
        let per_unit = |k: usize| match (case.bases.power_va, case.bases.voltage_v) {
            (Some(s), Some(v)) => Some(PerUnit {
                p_pu: sol.p[k] / s,
                q_pu: sol.q[k] / s,
                e_mag_pu: sol.e[k].norm() / (rms_ratio::<f64>() * v),
            }),
            _ => None,
        };
        let buses = (0..pf.n())
            .map(|k| Bus {
                node: k,
                kind: pf.buses[k].kind().to_string(),
                e_mag_v_rms: sol.e[k].norm(),
                delta_rad: sol.delta[k],
                p_w: sol.p[k],
                q_var: sol.q[k],
                e_v_rms: pair(sol.e[k]),
                i_a_rms: pair(sol.i[k]),
                v_v_rms: pair(sol.v[k]),
                per_unit: per_unit(k),
            })
            .collect();
        let lines = pf
            .network
            .edges()
            .iter()
            .enumerate()
            .map(|(e, &(from, to))| Line { edge: e, from, to, f_a_rms: pair(sol.f[e]) })
            .collect();
        Ok(Self {
            case: case.name.clone(),
            model: model_name(sol.model).to_string(),
            reference_node: pf.reference,
            omega_s_rad_s: pf.omega_s,
            omega_ss_rad_s: sol.omega_ss,
            iterations: sol.iterations,
            residuals: residuals(pf, sol)?,
            buses,
            lines,
            comparison: None,
        })
    }

    /// Rebuilds the solution the file was written from.
    pub fn solution(&self) -> PhasorSolution {
        PhasorSolution {
            model: if self.model == "m3p" { PowerFlowModel::M3Prime } else { PowerFlowModel::M3 },
            e: self.buses.iter().map(|b| complex(b.e_v_rms)).collect(),
            delta: self.buses.iter().map(|b| b.delta_rad).collect(),
            p: self.buses.iter().map(|b| b.p_w).collect(),
            q: self.buses.iter().map(|b| b.q_var).collect(),
            omega_ss: self.omega_ss_rad_s,
            i: self.buses.iter().map(|b| complex(b.i_a_rms)).collect(),
            v: self.buses.iter().map(|b| complex(b.v_v_rms)).collect(),
            f: self.lines.iter().map(|l| complex(l.f_a_rms)).collect(),
            iterations: self.iterations,
            residual: self.residuals.newton_scaled,
        }
    }
}
