//! Dynamic and steady-state models of three-phase networks hosting
//! synchronous generators and grid-following and grid-forming inverters.
//!
//! * [`frames`]: phase, space-phasor, rotating-frame and RMS quantities.
//! * [`network`]: RL network equations and admittances.
//! * [`resources`]: generator and inverter models.
//! * [`sim`]: assembled dynamic models and time stepping.
//! * [`steady`]: power flow with frequency as an unknown.
//! * [`case`]: TOML case files.
//! * [`verify`]: cross-model checks.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod case;
pub mod frames;
pub mod network;
pub mod resources;
pub mod sim;
pub mod steady;
pub mod verify;

use thiserror::Error;

pub type ThreePhase = frames::ThreePhase<f64>;
pub type SpacePhasor = frames::SpacePhasor<f64>;
pub type Frame = frames::Frame<f64>;
pub type FrameSample = frames::FrameSample<f64>;
pub type RmsPhasor = frames::RmsPhasor<f64>;
pub type PowerTriple = frames::PowerTriple<f64>;

pub use case::{load_case, parse_case, Case, CaseError};
pub use network::{NetworkError, NetworkSpec};
pub use resources::ResourceError;
pub use sim::{ModelKind, SimConfig, SimError, System};
pub use steady::{PhasorSolution, PowerFlowCase, SteadyError};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Frame(#[from] frames::FrameError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Resource(#[from] ResourceError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Steady(#[from] SteadyError),
}
