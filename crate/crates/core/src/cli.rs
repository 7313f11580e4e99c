//! Command-line front end. Every command is a thin composition of library
//! calls; `run` returns the process exit code.
//!
//! Exit codes: 0 ok, 1 input error, 2 hypothesis violation, 3 disturbance
//! penalty below threshold, 4 no finite value / diverging / unstable,
//! 5 solver or iteration limit.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DVector;

use crate::bellman::{self, BellmanError, ValueIterationOptions, Verdict};
use crate::io::{self as files, InputError, LoadedInstance, ReportFile, ValueIterationRecord};
use crate::lp::{LpError, LpOptions};
use crate::model::{self, HypothesisReport, ProblemInstance};
use crate::simulate::{self, SimulateError, Trajectory};
use crate::synthesis::{self, SynthesisCertificate, SynthesisError, SynthesisOptions, SynthesisStatus};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_HYPOTHESIS: i32 = 2;
pub const EXIT_GAMMA: i32 = 3;
pub const EXIT_NO_FINITE_VALUE: i32 = 4;
pub const EXIT_SOLVER_LIMIT: i32 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "posminimax",
    version,
    about = "Minimax-optimal sparse state feedback for positive linear systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate an instance and check A >= |B|E and s > E'|r|
    Check {
        path: PathBuf,
        /// Required margin in s - E'|r| > eps
        #[arg(long, default_value_t = 0.0)]
        strict_eps: f64,
    },
    /// Solve the synthesis LP and print the gain and cost vector
    Synth {
        path: PathBuf,
        /// Continue even if the standing hypotheses fail
        #[arg(long)]
        force: bool,
        /// Replace gamma (comma-separated, one entry per disturbance)
        #[arg(long, value_name = "VEC")]
        gamma_override: Option<String>,
        /// Write a JSON report here
        #[arg(long, value_name = "PATH")]
        report: Option<PathBuf>,
        /// Feasibility tolerance
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Also run value iteration and include its verdict
        #[arg(long)]
        iterate: bool,
    },
    /// Run value iteration from p = 0
    Iterate {
        path: PathBuf,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 100_000)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e12)]
        divergence_bound: f64,
        #[arg(long, value_name = "VEC")]
        gamma_override: Option<String>,
        #[arg(long)]
        force: bool,
    },
    /// Synthesize, then roll out the closed loop and emit a CSV trajectory
    Simulate {
        path: PathBuf,
        #[arg(long, default_value_t = 400)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// zero, random, adversarial, or a JSON file holding a list of
        /// disturbance vectors (repeated cyclically)
        #[arg(long, default_value = "zero")]
        disturbance: String,
        /// Upper end of the uniform range for --disturbance random
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        /// Write the CSV here instead of standard output
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
        #[arg(long, value_name = "VEC")]
        gamma_override: Option<String>,
        #[arg(long)]
        force: bool,
        /// Adversarial mode reports when the cost exceeds this multiple of p'x0
        #[arg(long, default_value_t = 10.0)]
        bound_factor: f64,
        /// Step budget for the adversarial search
        #[arg(long, default_value_t = 100_000_000)]
        max_horizon: usize,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INPUT,
            };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    let res = match cli.command {
        Command::Check { path, strict_eps } => cmd_check(&path, strict_eps, out),
        Command::Synth {
            path,
            force,
            gamma_override,
            report,
            tol,
            iterate,
        } => cmd_synth(
            &path,
            &SynthArgs {
                force,
                gamma_override,
                report,
                tol,
                iterate,
            },
            out,
        ),
        Command::Iterate {
            path,
            tol,
            max_iter,
            divergence_bound,
            gamma_override,
            force,
        } => cmd_iterate(
            &path,
            &ValueIterationOptions {
                tol,
                max_iter,
                divergence_bound,
                ..ValueIterationOptions::default()
            },
            gamma_override.as_deref(),
            force,
            out,
        ),
        Command::Simulate {
            path,
            horizon,
            seed,
            disturbance,
            scale,
            csv,
            gamma_override,
            force,
            bound_factor,
            max_horizon,
        } => cmd_simulate(
            &path,
            &SimulateArgs {
                horizon,
                seed,
                disturbance,
                scale,
                csv,
                gamma_override,
                force,
                bound_factor,
                max_horizon,
            },
            out,
            err,
        ),
    };
    match res {
        Ok(code) => code,
        Err(failure) => {
            let _ = writeln!(err, "error: {}", failure.message);
            failure.code
        }
    }
}

/// A message for standard error plus the exit code that goes with it.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<InputError> for Failure {
    fn from(e: InputError) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: e.to_string(),
        }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: e.to_string(),
        }
    }
}

impl From<SynthesisError> for Failure {
    fn from(e: SynthesisError) -> Self {
        let code = match e {
            SynthesisError::Invalid(_) => EXIT_INPUT,
            SynthesisError::Lp(LpError::MaxPivotsExceeded { .. }) | SynthesisError::LpInfeasible => {
                EXIT_SOLVER_LIMIT
            }
            SynthesisError::Lp(_) => EXIT_INPUT,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<i32, Failure>;

/// Human-readable number with four significant digits.
pub fn sig4(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        let decimals = (3 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.3e}")
    }
}

fn fmt_vec<'a>(v: impl IntoIterator<Item = &'a f64>) -> String {
    let parts: Vec<String> = v.into_iter().map(|x| sig4(*x)).collect();
    format!("[{}]", parts.join(", "))
}

fn fmt_mat(m: &nalgebra::DMatrix<f64>) -> String {
    let rows: Vec<String> = m.row_iter().map(|r| fmt_vec(r.iter())).collect();
    format!("[{}]", rows.join(", "))
}

fn parse_gamma(text: &str, l: usize) -> Result<DVector<f64>, Failure> {
    let vals: Result<Vec<f64>, _> = text.split(',').map(|t| t.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|e| Failure {
        code: EXIT_INPUT,
        message: format!("--gamma-override: {e}"),
    })?;
    if vals.len() != l {
        return Err(Failure {
            code: EXIT_INPUT,
            message: format!("--gamma-override: got {} entries, expected {l}", vals.len()),
        });
    }
    if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Failure {
            code: EXIT_INPUT,
            message: "--gamma-override: entries must be finite and nonnegative".into(),
        });
    }
    Ok(DVector::from_vec(vals))
}

fn load_with_override(path: &Path, gamma: Option<&str>) -> Result<(LoadedInstance, ProblemInstance), Failure> {
    let loaded = files::load_instance(path)?;
    let inst = match gamma {
        Some(text) => loaded.instance.with_gamma(parse_gamma(text, loaded.instance.l)?),
        None => loaded.instance.clone(),
    };
    Ok((loaded, inst))
}

fn print_hypotheses(out: &mut dyn Write, rep: &HypothesisReport) -> io::Result<()> {
    writeln!(
        out,
        "A - |B|E = {}  ({})",
        fmt_mat(&rep.positivity_margin),
        if rep.positivity_ok { "ok" } else { "VIOLATED" }
    )?;
    writeln!(
        out,
        "s - E'|r| = {}  ({})",
        fmt_vec(rep.penalty_margin.iter()),
        if rep.penalty_ok { "ok" } else { "VIOLATED" }
    )?;
    for v in &rep.violations {
        match v.col {
            Some(c) => writeln!(
                out,
                "  {} fails at ({}, {}): margin {}",
                v.hypothesis,
                v.row + 1,
                c + 1,
                sig4(v.value)
            )?,
            None => writeln!(out, "  {} fails at {}: margin {}", v.hypothesis, v.row + 1, sig4(v.value))?,
        }
    }
    Ok(())
}

pub fn cmd_check(path: &Path, strict_eps: f64, out: &mut dyn Write) -> CmdResult {
    let loaded = files::load_instance(path)?;
    let rep = model::check_hypotheses_with(&loaded.instance, strict_eps);
    print_hypotheses(out, &rep)?;
    Ok(if rep.all_ok() { EXIT_OK } else { EXIT_HYPOTHESIS })
}

#[derive(Debug, Clone, Default)]
pub struct SynthArgs {
    pub force: bool,
    pub gamma_override: Option<String>,
    pub report: Option<PathBuf>,
    pub tol: f64,
    pub iterate: bool,
}

fn synth_options(force: bool, tol: f64) -> SynthesisOptions {
    SynthesisOptions {
        lp: LpOptions {
            feas_tol: tol,
            ..LpOptions::default()
        },
        force,
        ..SynthesisOptions::default()
    }
}

fn synth_exit_code(cert: &SynthesisCertificate) -> i32 {
    match cert.status {
        SynthesisStatus::HypothesesViolated => EXIT_HYPOTHESIS,
        SynthesisStatus::NoFiniteValue => EXIT_NO_FINITE_VALUE,
        SynthesisStatus::Synthesized => match &cert.optimum {
            Some(o) if o.gamma_ok => EXIT_OK,
            _ => EXIT_GAMMA,
        },
    }
}

pub fn cmd_synth(path: &Path, args: &SynthArgs, out: &mut dyn Write) -> CmdResult {
    let (loaded, inst) = load_with_override(path, args.gamma_override.as_deref())?;
    let cert = synthesis::synthesize_with(&inst, &synth_options(args.force, args.tol))?;
    let mut report = ReportFile::new(&loaded, &inst, &cert);

    if let Some(name) = &loaded.name {
        writeln!(out, "instance: {name}")?;
    }
    print_hypotheses(out, &cert.hypotheses)?;
    writeln!(out, "status: {}", files::status_name(cert.status))?;
    match (&cert.optimum, &cert.unbounded_ray) {
        (Some(opt), _) => {
            writeln!(out, "LP pivots: {}", cert.lp_iterations)?;
            writeln!(out, "p = {}", fmt_vec(opt.p.iter()))?;
            writeln!(out, "zeta = {}", fmt_vec(opt.zeta.iter()))?;
            writeln!(out, "K = {}", fmt_mat(&opt.gain))?;
            writeln!(
                out,
                "gamma_min = F'p = {}  (gamma = {}: {})",
                fmt_vec(opt.gamma_min.iter()),
                fmt_vec(inst.gamma.iter()),
                if opt.gamma_ok { "ok" } else { "BELOW THRESHOLD" }
            )?;
            writeln!(out, "value p'x0 = {}", sig4(opt.value(&loaded.x0)))?;
            writeln!(out, "Bellman residual = {}", fmt_vec(opt.bellman_residual.iter()))?;
            let bracket = simulate::closed_loop_bracket(&inst, &opt.gain);
            writeln!(
                out,
                "spectral radius of A - BK in [{}, {}]",
                sig4(bracket.lower),
                sig4(bracket.upper)
            )?;
            report.spectral_radius = Some(bracket.into());
        }
        (None, Some(ray)) => {
            writeln!(
                out,
                "no finite value: LP objective grows without bound along (p, zeta) = {}",
                fmt_vec(ray.iter())
            )?;
        }
        (None, None) => {
            writeln!(out, "refusing to synthesize; rerun with --force to proceed anyway")?;
        }
    }

    if args.iterate && cert.status != SynthesisStatus::HypothesesViolated {
        let res = bellman::value_iterate(&inst, &ValueIterationOptions::default());
        report.value_iteration = ValueIterationRecord::from_result(&res);
        if let Some(vi) = &report.value_iteration {
            writeln!(out, "value iteration: {} after {} steps", vi.verdict, vi.iterations)?;
        }
    }

    if let Some(path) = &args.report {
        std::fs::write(path, report.to_json() + "\n").map_err(|e| Failure {
            code: EXIT_INPUT,
            message: format!("{}: {e}", path.display()),
        })?;
    }
    Ok(synth_exit_code(&cert))
}

pub fn cmd_iterate(
    path: &Path,
    opts: &ValueIterationOptions,
    gamma_override: Option<&str>,
    force: bool,
    out: &mut dyn Write,
) -> CmdResult {
    let (_, inst) = load_with_override(path, gamma_override)?;
    let hyp = model::check_hypotheses(&inst);
    if !hyp.all_ok() && !force {
        print_hypotheses(out, &hyp)?;
        writeln!(out, "refusing to iterate; rerun with --force to proceed anyway")?;
        return Ok(EXIT_HYPOTHESIS);
    }
    match bellman::value_iterate(&inst, opts) {
        Ok(trace) => {
            writeln!(out, "verdict: {}", files::verdict_name(&trace.verdict))?;
            writeln!(out, "iterations: {}", trace.iterations)?;
            writeln!(out, "final_delta: {}", sig4(trace.final_delta))?;
            writeln!(out, "p = {}", fmt_vec(trace.last().iter()))?;
            Ok(match trace.verdict {
                Verdict::Converged => EXIT_OK,
                Verdict::Diverging => EXIT_NO_FINITE_VALUE,
                Verdict::GammaViolatedAtIteration { k, violation } => {
                    writeln!(
                        out,
                        "F'p_{k} exceeds gamma in component {} by {}",
                        violation.component + 1,
                        sig4(violation.excess)
                    )?;
                    EXIT_GAMMA
                }
            })
        }
        Err(BellmanError::MaxIterExceeded {
            iterations,
            final_delta,
            last,
        }) => {
            writeln!(out, "verdict: MaxIterExceeded")?;
            writeln!(out, "iterations: {iterations}")?;
            writeln!(out, "final_delta: {}", sig4(final_delta))?;
            writeln!(out, "p = {}", fmt_vec(last.iter()))?;
            Ok(EXIT_SOLVER_LIMIT)
        }
        Err(e @ BellmanError::Invalid(_)) => Err(Failure {
            code: EXIT_INPUT,
            message: e.to_string(),
        }),
    }
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub horizon: usize,
    pub seed: u64,
    pub disturbance: String,
    pub scale: f64,
    pub csv: Option<PathBuf>,
    pub gamma_override: Option<String>,
    pub force: bool,
    pub bound_factor: f64,
    pub max_horizon: usize,
}

impl Default for SimulateArgs {
    fn default() -> Self {
        SimulateArgs {
            horizon: 400,
            seed: 0,
            disturbance: "zero".into(),
            scale: 1.0,
            csv: None,
            gamma_override: None,
            force: false,
            bound_factor: 10.0,
            max_horizon: 100_000_000,
        }
    }
}

/// Writes `t, x_1..x_n, u_1..u_m, w_1..w_l, partial_cost`. The last row
/// holds the terminal state, with empty input and disturbance cells.
pub fn write_trajectory_csv<W: Write>(writer: W, traj: &Trajectory, inst: &ProblemInstance) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend((1..=inst.n).map(|i| format!("x_{i}")));
    header.extend((1..=inst.m).map(|i| format!("u_{i}")));
    header.extend((1..=inst.l).map(|i| format!("w_{i}")));
    header.push("partial_cost".into());
    w.write_record(&header)?;
    for t in 0..=traj.horizon() {
        let mut row = vec![t.to_string()];
        row.extend(traj.states[t].iter().map(|v| v.to_string()));
        match (traj.inputs.get(t), traj.disturbances.get(t)) {
            (Some(u), Some(d)) => {
                row.extend(u.iter().map(|v| v.to_string()));
                row.extend(d.iter().map(|v| v.to_string()));
            }
            _ => row.extend(std::iter::repeat_n(String::new(), inst.m + inst.l)),
        }
        row.push(traj.partial_costs[t].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn sim_failure(e: SimulateError) -> Failure {
    let code = match e {
        SimulateError::Unstable { .. } | SimulateError::SingularSystem { .. } => EXIT_NO_FINITE_VALUE,
        SimulateError::HorizonExhausted { .. } => EXIT_SOLVER_LIMIT,
        _ => EXIT_INPUT,
    };
    Failure {
        code,
        message: e.to_string(),
    }
}

pub fn cmd_simulate(path: &Path, args: &SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let (loaded, inst) = load_with_override(path, args.gamma_override.as_deref())?;
    let cert = synthesis::synthesize_with(&inst, &synth_options(args.force, LpOptions::default().feas_tol))?;
    let opt = match (&cert.status, &cert.optimum) {
        (SynthesisStatus::Synthesized, Some(opt)) => opt,
        (SynthesisStatus::HypothesesViolated, _) => {
            print_hypotheses(err, &cert.hypotheses)?;
            return Err(Failure {
                code: EXIT_HYPOTHESIS,
                message: "hypotheses violated; rerun with --force to simulate anyway".into(),
            });
        }
        _ => {
            return Err(Failure {
                code: EXIT_NO_FINITE_VALUE,
                message: "synthesis found no finite value; nothing to simulate".into(),
            })
        }
    };
    let x0 = &loaded.x0;
    let value = opt.value(x0);
    // summary goes to stderr when the CSV occupies stdout
    let mut notes: Vec<String> = Vec::new();

    let disturbances = match args.disturbance.as_str() {
        "zero" => simulate::zero_disturbances(inst.l, args.horizon),
        "random" => simulate::random_disturbances(inst.l, args.horizon, args.scale, args.seed),
        "adversarial" => {
            if opt.gamma_ok {
                notes.push("gamma >= F'p: the worst-case disturbance is w = 0".into());
                simulate::zero_disturbances(inst.l, args.horizon)
            } else {
                let bound = args.bound_factor * value;
                let wit = simulate::demonstrate_unboundedness(&inst, &opt.gain, x0, bound, args.max_horizon)
                    .map_err(sim_failure)?;
                notes.push(format!(
                    "adversarial disturbance on channel {} grows the cost by {} per step",
                    wit.component + 1,
                    sig4(wit.growth_rate)
                ));
                notes.push(format!(
                    "partial cost {} exceeds {} x p'x0 = {} at T_exceed = {}",
                    sig4(wit.cost_at_exceed),
                    sig4(args.bound_factor),
                    sig4(bound),
                    wit.t_exceed
                ));
                vec![wit.disturbance; args.horizon]
            }
        }
        file => {
            let seq = files::load_disturbances(Path::new(file), inst.l)?;
            (0..args.horizon).map(|t| seq[t % seq.len()].clone()).collect()
        }
    };

    let traj = simulate::rollout(&inst, &opt.gain, x0, &disturbances, args.horizon).map_err(sim_failure)?;
    match &args.csv {
        Some(path) => {
            let file = File::create(path).map_err(|e| Failure {
                code: EXIT_INPUT,
                message: format!("{}: {e}", path.display()),
            })?;
            write_trajectory_csv(file, &traj, &inst)?;
        }
        None => write_trajectory_csv(&mut *out, &traj, &inst)?,
    }

    let summary: &mut dyn Write = if args.csv.is_some() { out } else { err };
    writeln!(summary, "p'x0 = {}", sig4(value))?;
    writeln!(
        summary,
        "partial cost after {} steps = {}",
        traj.horizon(),
        sig4(*traj.partial_costs.last().unwrap())
    )?;
    writeln!(summary, "smallest state component = {}", sig4(traj.min_state()))?;
    for n in notes {
        writeln!(summary, "{n}")?;
    }
    Ok(if opt.gamma_ok { EXIT_OK } else { EXIT_GAMMA })
}
