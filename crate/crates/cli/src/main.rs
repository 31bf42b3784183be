//! `netdyn`: simulate, solve power flow, estimate steady frequency and run
//! the verification checks on a TOML case file.
//!
//! Exit codes: 0 success, 1 usage, 2 validation, 3 solver non-convergence,
//! 4 verification failure.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use netdyn::sim::{run, InitMode, Integrator, SteadyDetect};
use netdyn::steady::{omega_ss_lossless, solve_m3, solve_m3prime, voltage_discrepancy, PowerFlowCase};
use netdyn::verify::{run_checks, CheckId};
use netdyn::{load_case, Case, ModelKind, SimError, SteadyError};

use netdyn_cli::solution::{Comparison, SolutionFile};

#[derive(Debug, Parser)]
#[command(name = "netdyn", version, about = "Network dynamics with generators and inverters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DynModel {
    M1,
    M2,
    M2p,
}

impl From<DynModel> for ModelKind {
    fn from(m: DynModel) -> Self {
        match m {
            DynModel::M1 => ModelKind::M1,
            DynModel::M2 => ModelKind::M2,
            DynModel::M2p => ModelKind::M2Prime,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PfModel {
    M3,
    M3p,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Init {
    Flat,
    PowerFlow,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Rk4,
    Trapezoidal,
}

fn positive(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(format!("must be a positive number, got {s}"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if x >= 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(format!("must be a non-negative number, got {s}"))
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate a dynamic model and write the trajectory as CSV.
    Simulate {
        case: PathBuf,
        #[arg(long, value_enum, default_value = "m2")]
        model: DynModel,
        /// Horizon in seconds; defaults to the case file, else 1 s.
        #[arg(long, value_parser = non_negative)]
        t_end: Option<f64>,
        /// Step in seconds; defaults to the case file, else per model.
        #[arg(long, value_parser = positive)]
        dt: Option<f64>,
        #[arg(long, value_enum)]
        integrator: Option<Method>,
        #[arg(long, value_enum)]
        init: Option<Init>,
        /// Keep every n-th step.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        record_stride: Option<u64>,
        /// Report the steady state when the derivative test holds.
        #[arg(long)]
        detect_steady: bool,
        /// CSV output; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the steady-state power flow and write the solution as JSON.
    Powerflow {
        case: PathBuf,
        #[arg(long, value_enum, default_value = "m3")]
        model: PfModel,
        /// JSON output; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the lossless closed-form steady frequency.
    Freq { case: PathBuf },
    /// Run the verification checks on a case.
    Verify {
        case: PathBuf,
        /// Checks to run, e.g. `a1,a6`; all when absent.
        #[arg(long, value_delimiter = ',')]
        only: Vec<CheckId>,
        /// JSON report output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Validation(anyhow::Error),
    Convergence(anyhow::Error),
    Verification,
    Io(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) | Failure::Io(_) => 2,
            Failure::Convergence(_) => 3,
            Failure::Verification => 4,
        }
    }
}

fn steady_failure(e: SteadyError) -> Failure {
    match e {
        SteadyError::NotConverged { .. } | SteadyError::SingularJacobian(_) => Failure::Convergence(e.into()),
        _ => Failure::Validation(e.into()),
    }
}

fn sim_failure(e: SimError) -> Failure {
    match e {
        SimError::Steady(s) => steady_failure(s),
        SimError::Singular { .. } | SimError::NonFinite { .. } | SimError::Newton { .. } | SimError::NotSettled => {
            Failure::Convergence(e.into())
        }
        _ => Failure::Validation(e.into()),
    }
}

fn read_case(path: &Path) -> Result<Case, Failure> {
    load_case(path).map_err(|e| Failure::Validation(anyhow!(e).context(format!("loading {}", path.display()))))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display())).map_err(Failure::Io)?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> Result<(), Failure> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(io::Error::from)
        .and_then(|_| writeln!(w))
        .and_then(|_| w.flush())
        .context("writing JSON")
        .map_err(Failure::Io)
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    path: &Path,
    model: DynModel,
    t_end: Option<f64>,
    dt: Option<f64>,
    integrator: Option<Method>,
    init: Option<Init>,
    record_stride: Option<u64>,
    detect_steady: bool,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let case = read_case(path)?;
    let model = ModelKind::from(model);
    let mut config = case.sim_config(model);
    if let Some(t) = t_end {
        config.t_end = t;
    }
    if let Some(h) = dt {
        config.dt = h;
    }
    if let Some(m) = integrator {
        config.integrator = match m {
            Method::Rk4 => Integrator::Rk4,
            Method::Trapezoidal => Integrator::Trapezoidal,
        };
    }
    if let Some(n) = record_stride {
        config.record_stride = n as usize;
    }
    if detect_steady && config.steady_detect.is_none() {
        config.steady_detect = Some(SteadyDetect::default());
    }
    let init = match init {
        Some(Init::Flat) => InitMode::Flat,
        Some(Init::PowerFlow) => InitMode::PowerFlow,
        None => case.init_mode(),
    };
    let sys = case.assemble(model).map_err(sim_failure)?;
    let x0 = sys.initial_state(init).map_err(sim_failure)?;
    let traj = run(&sys, &x0, &config).map_err(sim_failure)?;
    let mut w = output(out)?;
    traj.write_csv(&mut w).and_then(|_| w.flush()).context("writing CSV").map_err(Failure::Io)?;
    eprintln!(
        "{}: {} records to t = {} s",
        model.name(),
        traj.records.len(),
        traj.final_time
    );
    if let Some(s) = &traj.steady {
        eprintln!("steady state at t = {} s, omega_ss = {} rad/s", s.t_ss, s.omega_ss);
    } else if config.steady_detect.is_some() {
        eprintln!("steady state not detected");
    }
    Ok(())
}

fn power_flow_case(case: &Case) -> Result<PowerFlowCase, Failure> {
    case.power_flow_case().map_err(steady_failure)
}

fn powerflow(path: &Path, model: PfModel, out: Option<&Path>) -> Result<(), Failure> {
    let case = read_case(path)?;
    let pf = power_flow_case(&case)?;
    let file = match model {
        PfModel::M3 => {
            let sol = solve_m3(&pf).map_err(steady_failure)?;
            SolutionFile::new(&case, &pf, &sol).map_err(steady_failure)?
        }
        PfModel::M3p => {
            let sol = solve_m3prime(&pf).map_err(steady_failure)?;
            let mut file = SolutionFile::new(&case, &pf, &sol).map_err(steady_failure)?;
            match solve_m3(&pf) {
                Ok(full) => {
                    let d = voltage_discrepancy(&sol, &full);
                    file.comparison = Some(Comparison {
                        against: "m3".into(),
                        against_omega_ss_rad_s: full.omega_ss,
                        max_delta_e_v_rms: d.iter().copied().fold(0.0, f64::max),
                        delta_e_v_rms: d,
                    });
                }
                Err(e) => eprintln!("comparison skipped: m3 failed: {e}"),
            }
            file
        }
    };
    write_json(out, &file)
}

fn freq(path: &Path) -> Result<(), Failure> {
    let case = read_case(path)?;
    let pf = power_flow_case(&case)?;
    let w = omega_ss_lossless(&pf).map_err(steady_failure)?;
    println!("omega_ss_rad_s = {w}");
    println!("offset_rad_s = {}", w - pf.omega_s);
    println!("f_ss_hz = {}", w / (2.0 * std::f64::consts::PI));
    Ok(())
}

fn verify(path: &Path, only: &[CheckId], out: Option<&Path>) -> Result<(), Failure> {
    let case = read_case(path)?;
    let ids: Vec<CheckId> = if only.is_empty() { CheckId::ALL.to_vec() } else { only.to_vec() };
    let report = run_checks(&case, &ids);
    println!("{report}");
    if out.is_some() {
        write_json(out, &report)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Simulate { case, model, t_end, dt, integrator, init, record_stride, detect_steady, out } => {
            simulate(&case, model, t_end, dt, integrator, init, record_stride, detect_steady, out.as_deref())
        }
        Command::Powerflow { case, model, out } => powerflow(&case, model, out.as_deref()),
        Command::Freq { case } => freq(&case),
        Command::Verify { case, only, out } => verify(&case, &only, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Validation(e) | Failure::Convergence(e) | Failure::Io(e) => eprintln!("error: {e:#}"),
                Failure::Verification => eprintln!("error: verification failed"),
            }
            ExitCode::from(f.code())
        }
    }
}
