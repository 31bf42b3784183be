//! Resource models: synchronous generator, grid-following inverter and the
//! generic grid-forming inverter.
//!
//! Each resource works in its own local dq frame and reports the tuple
//! `(|E'|, delta', omega, theta)` that places its terminal voltage in the
//! network.

pub mod gfl;
pub mod gfm;
pub mod sg;

use num_complex::Complex64;
use thiserror::Error;

pub use gfl::{gfl_rhs, gfl_steady, Gfl, GflParams, GflRates, GflState};
pub use gfm::{gfm_rhs, gfm_steady, Gain, Gfm, GfmFlavor, GfmParams, GfmRates, GfmState, VoltageLaw};
pub use sg::{sg_rhs, sg_steady, FluxMap, SgFeedback, SgParams, SgRates, SgState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResourceError {
    #[error("flux-linkage to current map is singular for these machine parameters")]
    SingularFluxMap,
    #[error("parameter `{name}` {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("{flavor} bindings violated: expected {expected}, found {found}")]
    Binding {
        flavor: &'static str,
        expected: &'static str,
        found: String,
    },
    #[error("voltage magnitude {0} is not positive; magnitude-dependent gains are undefined")]
    VoltageMagnitude(f64),
    #[error("current-control loop gain {0} is not below one; the terminal voltage cannot be resolved")]
    LoopGain(f64),
    #[error("injected current is zero; the terminal voltage is undefined")]
    ZeroCurrent,
    #[error("state vector has {got} entries, expected {expected}")]
    StateLength { got: usize, expected: usize },
}

/// Signals a resource exposes to the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceOut {
    pub e_mag: f64,
    pub delta: f64,
    pub omega: f64,
    pub theta: f64,
}

impl InterfaceOut {
    /// Terminal voltage in the resource's local frame.
    pub fn emf_local(&self) -> Complex64 {
        Complex64::from_polar(self.e_mag, self.delta)
    }
}

/// Local-frame signals at a resource terminal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalSignals {
    /// Network node voltage.
    pub v: Complex64,
    /// Current injected into the network.
    pub i: Complex64,
    /// Terminal voltage behind the interface branch.
    pub e: Complex64,
}

/// Controlled voltage source driving an interface branch.
///
/// The frame angle `theta` is owned by the caller and integrated from the
/// frequency returned by [`SourceModel::rhs`]; state slices exclude it.
pub trait SourceModel: Send + Sync + std::fmt::Debug {
    fn kind(&self) -> &'static str;

    fn state_names(&self) -> Vec<&'static str>;

    fn state_len(&self) -> usize {
        self.state_names().len()
    }

    fn flat_start(&self) -> Vec<f64>;

    /// States that grow without bound in steady operation (integrated
    /// angles and the like); excluded from steady-state detection.
    fn drifting_states(&self) -> Vec<usize> {
        Vec::new()
    }

    /// Terminal voltage in the local frame given the injected current.
    fn emf(&self, x: &[f64], i: Complex64) -> Result<Complex64, ResourceError>;

    /// Writes state derivatives and returns the frame frequency.
    fn rhs(&self, x: &[f64], sig: &LocalSignals, dx: &mut [f64]) -> Result<f64, ResourceError>;

    /// State and frame angle that reproduce a sinusoidal steady state at
    /// `omega_ss`, with `e`, `i`, `v` given in a common frame at time zero.
    fn steady_start(
        &self,
        e: Complex64,
        i: Complex64,
        v: Complex64,
        omega_ss: f64,
    ) -> Result<(Vec<f64>, f64), ResourceError>;
}

pub(crate) fn check_positive(name: &'static str, x: f64) -> Result<(), ResourceError> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(ResourceError::InvalidParameter { name, reason: format!("must be positive, got {x}") });
    }
    Ok(())
}

pub(crate) fn check_non_negative(name: &'static str, x: f64) -> Result<(), ResourceError> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(ResourceError::InvalidParameter {
            name,
            reason: format!("must be non-negative, got {x}"),
        });
    }
    Ok(())
}

pub(crate) fn check_finite(name: &'static str, x: f64) -> Result<(), ResourceError> {
    if !x.is_finite() {
        return Err(ResourceError::InvalidParameter { name, reason: format!("must be finite, got {x}") });
    }
    Ok(())
}

pub(crate) fn check_len(x: &[f64], expected: usize) -> Result<(), ResourceError> {
    if x.len() != expected {
        return Err(ResourceError::StateLength { got: x.len(), expected });
    }
    Ok(())
}
