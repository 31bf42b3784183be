//! Cross-model verification checks A1-A10 with runtime oracles.
//!
//! Each check takes a case and returns a [`CheckOutcome`] carrying the
//! measured error and the tolerance it was held to. Checks that need a
//! resource the case lacks are reported as skipped.

mod dynamics;
mod oracles;
mod powerflow;

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::case::Case;

pub use dynamics::{
    check_frequency_closed_form, check_gfl_tracking, check_integrator_order, check_m1_m2, check_m1_m2_with,
    check_sg_pv, check_steady_consistency, near_lossless, settle, A1Init, Settled,
};
pub use oracles::{
    check_admittance, check_gfm_bindings, check_power_frames, kron_oracle, DroopOracle, VsmOracle,
};
pub use powerflow::{check_m3_m3prime, zero_offset_case};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckId {
    A1,
    A2,
    A3,
    A4,
    A5,
    A6,
    A7,
    A8,
    A9,
    A10,
}

impl CheckId {
    pub const ALL: [CheckId; 10] = [
        CheckId::A1,
        CheckId::A2,
        CheckId::A3,
        CheckId::A4,
        CheckId::A5,
        CheckId::A6,
        CheckId::A7,
        CheckId::A8,
        CheckId::A9,
        CheckId::A10,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CheckId::A1 => "a1",
            CheckId::A2 => "a2",
            CheckId::A3 => "a3",
            CheckId::A4 => "a4",
            CheckId::A5 => "a5",
            CheckId::A6 => "a6",
            CheckId::A7 => "a7",
            CheckId::A8 => "a8",
            CheckId::A9 => "a9",
            CheckId::A10 => "a10",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            CheckId::A1 => "phase-domain and DQ network models agree",
            CheckId::A2 => "settled frequency matches the lossless closed form",
            CheckId::A3 => "settled dynamics satisfy the power-flow equations",
            CheckId::A4 => "grid-following inverter tracks its power setpoint",
            CheckId::A5 => "generator settles on its voltage and droop line",
            CheckId::A6 => "reduced admittance matches Kron reduction",
            CheckId::A7 => "power is frame invariant",
            CheckId::A8 => "generic grid-forming model reproduces droop and VSM controllers",
            CheckId::A9 => "frequency-aware and synchronous power flows",
            CheckId::A10 => "RK4 global error falls by 16 per step halving",
        }
    }
}

impl fmt::Display for CheckId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownCheck(pub String);

impl fmt::Display for UnknownCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown check `{}`, expected a1..a10", self.0)
    }
}

impl std::error::Error for UnknownCheck {}

impl FromStr for CheckId {
    type Err = UnknownCheck;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        CheckId::ALL
            .into_iter()
            .find(|c| c.label() == lower)
            .ok_or_else(|| UnknownCheck(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// The case has nothing the check applies to.
    Skipped,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub id: CheckId,
    pub title: String,
    pub status: Status,
    /// Measured error; `NaN` when the check could not run.
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
    /// Further measured quantities, reported but not asserted.
    pub extra: Vec<(String, f64)>,
    pub elapsed_s: f64,
}

impl CheckOutcome {
    /// Pass when `measured < tolerance`.
    pub fn bound(id: CheckId, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            id,
            title: id.title().to_string(),
            status: if measured < tolerance { Status::Pass } else { Status::Fail },
            measured,
            tolerance,
            detail: detail.into(),
            extra: Vec::new(),
            elapsed_s: 0.0,
        }
    }

    pub fn failed(id: CheckId, tolerance: f64, detail: impl Into<String>) -> Self {
        Self { status: Status::Fail, measured: f64::NAN, ..Self::bound(id, 0.0, tolerance, detail) }
    }

    pub fn skipped(id: CheckId, detail: impl Into<String>) -> Self {
        Self { status: Status::Skipped, measured: f64::NAN, ..Self::bound(id, 0.0, 0.0, detail) }
    }

    pub fn with_extra(mut self, name: impl Into<String>, value: f64) -> Self {
        self.extra.push((name.into(), value));
        self
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }

    /// One line: id, status, measured error against tolerance, detail.
    pub fn line(&self) -> String {
        let mut s = format!(
            "{:<3} {} measured {:.3e} tol {:.1e}  {}",
            self.id.label().to_ascii_uppercase(),
            self.status,
            self.measured,
            self.tolerance,
            self.title
        );
        if !self.detail.is_empty() {
            s.push_str(&format!(" ({})", self.detail));
        }
        for (k, v) in &self.extra {
            s.push_str(&format!(" {k}={v:e}"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub case: Option<String>,
    pub checks: Vec<CheckOutcome>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckOutcome::passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{}", c.line())?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed()).count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

/// Settled runs shared by the checks that inspect them.
#[derive(Default)]
pub struct Runs {
    near_lossless: OnceLock<Result<Settled, String>>,
    original: OnceLock<Result<Settled, String>>,
}

impl Runs {
    pub fn near_lossless(&self, case: &Case) -> &Result<Settled, String> {
        self.near_lossless
            .get_or_init(|| settle(&near_lossless(case)).map_err(|e| e.to_string()))
    }

    pub fn original(&self, case: &Case) -> &Result<Settled, String> {
        self.original.get_or_init(|| settle(case).map_err(|e| e.to_string()))
    }
}

pub fn run_check(case: &Case, id: CheckId, runs: &Runs) -> CheckOutcome {
    let start = Instant::now();
    let mut out = match id {
        CheckId::A1 => check_m1_m2(case),
        CheckId::A2 => check_frequency_closed_form(case, runs.near_lossless(case)),
        CheckId::A3 => check_steady_consistency(case, runs.near_lossless(case)),
        CheckId::A4 => check_gfl_tracking(runs.near_lossless(case)),
        CheckId::A5 => check_sg_pv(case, runs.original(case)),
        CheckId::A6 => check_admittance(case),
        CheckId::A7 => check_power_frames(),
        CheckId::A8 => check_gfm_bindings(case),
        CheckId::A9 => check_m3_m3prime(case),
        CheckId::A10 => check_integrator_order(),
    };
    out.elapsed_s = start.elapsed().as_secs_f64();
    out
}

/// Runs the selected checks in parallel, one thread each, and reports them
/// in the order given.
pub fn run_checks(case: &Case, ids: &[CheckId]) -> Report {
    let runs = Runs::default();
    let checks = std::thread::scope(|s| {
        let handles: Vec<_> = ids.iter().map(|&id| {
            let runs = &runs;
            s.spawn(move || run_check(case, id, runs))
        }).collect();
        handles
            .into_iter()
            .zip(ids)
            .map(|(h, &id)| {
                h.join()
                    .unwrap_or_else(|_| CheckOutcome::failed(id, f64::NAN, "check panicked"))
            })
            .collect()
    });
    Report { case: case.name.clone(), checks }
}
