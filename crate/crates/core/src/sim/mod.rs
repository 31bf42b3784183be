//! Integrated dynamic models: phase-domain network (M1), synchronous-frame
//! network (M2) and algebraic network lines (M2').

mod integrate;
mod system;
mod trajectory;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::NetworkError;
use crate::resources::ResourceError;
use crate::steady::SteadyError;

pub use integrate::{step, Integrator, Stepper};
pub use system::{Layout, NodeResource, NodeSlot, Signals, System};
pub use trajectory::{extract_steady, run, Record, SteadyInfo, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("network has {nodes} nodes but {resources} resources; every node hosts exactly one resource")]
    ResourceCount { nodes: usize, resources: usize },
    #[error("resource at node {node}: {source}")]
    Resource { node: usize, source: ResourceError },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Steady(#[from] SteadyError),
    #[error("singular {context} at t = {t} s")]
    Singular { t: f64, context: &'static str },
    #[error("non-finite derivative of `{state}` at t = {t} s")]
    NonFinite { t: f64, state: String },
    #[error("implicit step did not converge at t = {t} s")]
    Newton { t: f64 },
    #[error("steady state was not detected before the end of the run")]
    NotSettled,
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    /// Network RL dynamics in phase quantities.
    M1,
    /// Network RL dynamics in the synchronous DQ frame.
    M2,
    /// Interface dynamics in DQ with lines in sinusoidal steady state.
    M2Prime,
}

impl ModelKind {
    pub(crate) fn phasor_width(self) -> usize {
        match self {
            ModelKind::M1 => 3,
            ModelKind::M2 | ModelKind::M2Prime => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::M1 => "m1",
            ModelKind::M2 => "m2",
            ModelKind::M2Prime => "m2p",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyDetect {
    /// Time the derivative test has to hold, s.
    pub window: f64,
    /// Bound on the relative derivative norm.
    pub tol: f64,
    /// End the run once steady state is detected.
    pub stop: bool,
}

impl Default for SteadyDetect {
    fn default() -> Self {
        Self { window: 0.5, tol: 1e-6, stop: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_end: f64,
    pub dt: f64,
    pub integrator: Integrator,
    pub record_stride: usize,
    pub steady_detect: Option<SteadyDetect>,
}

impl SimConfig {
    /// Defaults per model: explicit RK4 at 10 us for the network-dynamic
    /// models, implicit trapezoidal at 1 ms with algebraic lines.
    pub fn for_model(model: ModelKind, t_end: f64) -> Self {
        match model {
            ModelKind::M1 | ModelKind::M2 => Self {
                t_end,
                dt: 1e-5,
                integrator: Integrator::Rk4,
                record_stride: 100,
                steady_detect: None,
            },
            ModelKind::M2Prime => Self {
                t_end,
                dt: 1e-3,
                integrator: Integrator::Trapezoidal,
                record_stride: 1,
                steady_detect: None,
            },
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(SimError::Config(format!("t_end must be non-negative, got {}", self.t_end)));
        }
        if self.t_end > 0.0 && self.t_end < self.dt {
            return Err(SimError::Config(format!("t_end {} is shorter than dt {}", self.t_end, self.dt)));
        }
        if self.record_stride == 0 {
            return Err(SimError::Config("record_stride must be at least 1".into()));
        }
        if let Some(d) = self.steady_detect {
            if !(d.window > 0.0 && d.tol > 0.0) {
                return Err(SimError::Config("steady-state window and tolerance must be positive".into()));
            }
            if d.window >= self.t_end {
                return Err(SimError::Config(format!(
                    "steady-state window {} must be shorter than t_end {}",
                    d.window, self.t_end
                )));
            }
        }
        Ok(())
    }

    /// Number of steps to reach `t_end`.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil().max(0.0) as usize
    }
}

/// How a run is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Resources at rest with no current flowing.
    Flat,
    /// Sinusoidal steady state from the matching power flow.
    PowerFlow,
}

impl System {
    /// Initial state for `mode`. Power-flow starts use the frequency-aware
    /// solution, or the synchronous-frequency one when lines are algebraic.
    pub fn initial_state(&self, mode: InitMode) -> Result<Vec<f64>, SimError> {
        match mode {
            InitMode::Flat => Ok(self.flat_start()),
            InitMode::PowerFlow => {
                let case = self.power_flow_case()?;
                let sol = match self.model() {
                    ModelKind::M2Prime => crate::steady::solve_m3prime(&case)?,
                    _ => crate::steady::solve_m3(&case)?,
                };
                self.steady_start(&sol)
            }
        }
    }

    pub fn power_flow_case(&self) -> Result<crate::steady::PowerFlowCase, SimError> {
        let buses = self
            .resources()
            .iter()
            .map(|r| r.bus_model())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| SimError::Config("custom resources have no steady-state bus model".into()))?;
        Ok(crate::steady::PowerFlowCase::new(self.network().clone(), buses, self.omega_s())?)
    }
}
