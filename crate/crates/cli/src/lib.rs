//! Command-line front end. [`run`] parses arguments, executes one
//! subcommand and returns the process exit code.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | usage or configuration error |
//! | 3 | solver failure |
//! | 4 | a check did not meet its tolerance |
//! | 5 | file input/output error |

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use chns::error::Error;
use chns::forward::{bound_violation, energy_report, mass, Trajectory};
use chns::geometry::max_divergence;
use chns::material::{validate, ValidationOptions};
use chns::optimize::{projected_gradient_descent, Status};
use chns::sensitivity::taylor_check;
use chns::workbench::config::{LawSpec, LAW_NAMES};
use chns::workbench::report::{history_csv, write_text};
use chns::workbench::setup::build_laws;
use chns::workbench::{emit_report, load_config, load_trajectory, parse_config, preset, save_controls, save_trajectory, RunConfig, Setup};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_CHECK: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Parser, Debug)]
#[command(name = "chns", version, about = "Nonlocal Cahn-Hilliard-Navier-Stokes solver and optimal control")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Source {
    /// Configuration file (TOML).
    #[arg(short, long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: stripe or tracking.
    #[arg(long)]
    preset: Option<String>,
    /// Override the output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the forward solver and write the trajectory and diagnostics.
    Simulate(Source),
    /// Projected-gradient optimization of the control.
    Optimize(Source),
    /// Compare adjoint directional derivatives with central differences.
    GradCheck(Source),
    /// Taylor remainder test of the tangent model.
    LinCheck(Source),
    /// Energy balance of a run (or of a stored trajectory).
    EnergyReport {
        #[command(flatten)]
        source: Source,
        /// Use this trajectory instead of simulating.
        #[arg(short, long)]
        trajectory: Option<PathBuf>,
    },
    /// Check the hypotheses on a material law.
    ValidateLaws {
        /// Law name; defaults to the one in the configuration.
        #[arg(long)]
        law: Option<String>,
        #[command(flatten)]
        source: Source,
        /// Number of samples in [-1, 1].
        #[arg(long, default_value_t = 2001)]
        samples: usize,
    },
}

/// Maps an error to its exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Shape(_) | Error::GridMismatch(_) | Error::MissingLaw(_) => {
            EXIT_CONFIG
        }
        Error::Io(_) | Error::Format { .. } | Error::UnsupportedVersion(_) => EXIT_IO,
        _ => EXIT_SOLVER,
    }
}

struct Failed(i32, String);

impl From<Error> for Failed {
    fn from(e: Error) -> Self {
        Failed(exit_code(&e), e.to_string())
    }
}

type Outcome = Result<i32, Failed>;

/// Runs the tool on `argv` (including the program name).
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
        }
    };
    let outcome = match cli.command {
        Command::Simulate(s) => simulate(&s),
        Command::Optimize(s) => optimize(&s),
        Command::GradCheck(s) => grad_check(&s),
        Command::LinCheck(s) => lin_check(&s),
        Command::EnergyReport { source, trajectory } => energy(&source, trajectory.as_deref()),
        Command::ValidateLaws { law, source, samples } => validate_laws(law.as_deref(), &source, samples),
    };
    match outcome {
        Ok(code) => code,
        Err(Failed(code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}

fn load(source: &Source) -> Result<RunConfig, Failed> {
    let mut rc = match (&source.config, &source.preset) {
        (Some(path), _) => load_config(path)?,
        (None, Some(name)) => {
            let text = preset(name)
                .ok_or_else(|| Failed(EXIT_CONFIG, format!("unknown preset {name:?}, expected stripe or tracking")))?;
            parse_config(text)?
        }
        (None, None) => return Err(Failed(EXIT_CONFIG, "one of --config or --preset is required".into())),
    };
    for w in &rc.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(out) = &source.out {
        rc.output.dir = out.clone();
    }
    Ok(rc)
}

fn simulate_or_save_partial(setup: &Setup, rc: &RunConfig, controls: &[chns::geometry::VectorField]) -> Result<Trajectory, Failed> {
    setup.simulate(controls).map_err(|f| {
        let path = rc.output_path(&rc.output.trajectory);
        match save_trajectory(&path, &f.partial) {
            Ok(()) => eprintln!(
                "partial trajectory ({} snapshots) written to {}",
                f.partial.snapshots.len(),
                path.display()
            ),
            Err(e) => eprintln!("could not write partial trajectory: {e}"),
        }
        Failed::from(f.error)
    })
}

fn write_run(setup: &Setup, rc: &RunConfig, traj: &Trajectory) -> Result<f64, Failed> {
    save_trajectory(&rc.output_path(&rc.output.trajectory), traj)?;
    let report = energy_report(traj, &setup.dk, setup.laws.as_ref())?;
    emit_report(&rc.output_path(&rc.output.diagnostics), traj, &report, &rc.output.plot_times)?;
    Ok(report.residual_l1)
}

fn simulate(source: &Source) -> Outcome {
    let rc = load(source)?;
    let setup = Setup::new(&rc)?;
    let v = setup.initial_control(&rc)?;
    let traj = simulate_or_save_partial(&setup, &rc, v.values())?;
    let residual = write_run(&setup, &rc, &traj)?;
    let m0 = mass(&traj.initial().phi);
    let drift = traj.snapshots.iter().map(|s| (mass(&s.phi) - m0).abs()).fold(0.0, f64::max);
    let bound = traj.snapshots.iter().map(|s| bound_violation(&s.phi)).fold(0.0, f64::max);
    let div = traj.snapshots.iter().map(|s| max_divergence(&s.u)).fold(0.0, f64::max);
    println!(
        "simulate: {} steps, mass drift {drift:.2e}, bound excess {bound:.2e}, max div {div:.2e}, energy residual {residual:.3e} -> {}",
        traj.n_steps(),
        rc.output.dir.display()
    );
    Ok(EXIT_OK)
}

fn optimize(source: &Source) -> Outcome {
    let rc = load(source)?;
    let spec = rc.optimize_spec()?.clone();
    let setup = Setup::new(&rc)?;
    let weights = setup.weights(&spec)?;
    let v0 = setup.initial_control(&rc)?;
    let result = projected_gradient_descent(&setup.problem(&weights), &v0, &spec.optimizer)?;
    save_controls(&rc.output_path(&rc.output.control), setup.grid, setup.cfg.dt, result.control.values())?;
    write_text(&rc.output_path(&rc.output.history), &history_csv(&result.history))?;
    write_run(&setup, &rc, &result.last.trajectory)?;
    let first = result.history[0].cost.total;
    let last = result.history.last().expect("history starts with the initial iterate");
    println!(
        "optimize: {:?} after {} iterations, f {first:.6e} -> {:.6e} ({:.1}% lower), kkt {:.3e}, inactive |gamma v + p| {:.3e} -> {}",
        result.status,
        result.iterations(),
        last.cost.total,
        100.0 * (1.0 - last.cost.total / first),
        last.kkt,
        result.inactive_residual,
        rc.output.dir.display()
    );
    Ok(if result.status == Status::LineSearchFailed { EXIT_CHECK } else { EXIT_OK })
}

fn grad_check(source: &Source) -> Outcome {
    let rc = load(source)?;
    let spec = rc.optimize_spec()?.clone();
    let setup = Setup::new(&rc)?;
    let weights = setup.weights(&spec)?;
    let problem = setup.problem(&weights);
    let c = &rc.check;
    let v = setup.random_control(c.seed, c.scale)?;
    let dirs = (0..c.directions)
        .map(|k| setup.random_control(c.seed + 1 + k as u64, c.scale))
        .collect::<chns::Result<Vec<_>>>()?;
    let grad = problem.reduced_gradient(&v)?.gradient;
    let fd = problem.fd_gradient(&v, &dirs, c.eps)?;
    println!("{:>4} {:>22} {:>22} {:>12}", "dir", "adjoint", "central diff", "rel error");
    let mut worst: f64 = 0.0;
    for (k, (h, d)) in dirs.iter().zip(&fd).enumerate() {
        let a = grad.dot(h)?;
        let rel = (a - d).abs() / a.abs().max(d.abs()).max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        println!("{k:>4} {a:>22.15e} {d:>22.15e} {rel:>12.3e}");
    }
    let ok = worst <= c.grad_tol;
    println!(
        "grad-check: max relative error {worst:.3e} (tolerance {:.1e}) {}",
        c.grad_tol,
        if ok { "PASS" } else { "FAIL" }
    );
    Ok(if ok { EXIT_OK } else { EXIT_CHECK })
}

fn lin_check(source: &Source) -> Outcome {
    let rc = load(source)?;
    let setup = Setup::new(&rc)?;
    let c = &rc.check;
    let v = setup.random_control(c.seed, c.scale)?;
    let h = setup.random_control(c.seed + 1, c.scale)?;
    let report = taylor_check(&setup.u0, &setup.phi0, &v, &h, &c.taylor_eps, &setup.dk, setup.laws.as_ref(), setup.cfg)?;
    println!("{:>10} {:>14}", "eps", "remainder");
    for r in &report.rows {
        println!("{:>10.1e} {:>14.6e}", r.eps, r.remainder);
    }
    let ratio = report.rows.last().expect("two or more rows").remainder / report.rows[0].remainder;
    let ok = report.monotone && ratio <= c.taylor_ratio;
    println!(
        "lin-check: monotone {}, r(last)/r(first) {ratio:.3e} (limit {:.2}) {}",
        report.monotone,
        c.taylor_ratio,
        if ok { "PASS" } else { "FAIL" }
    );
    Ok(if ok { EXIT_OK } else { EXIT_CHECK })
}

fn energy(source: &Source, trajectory: Option<&Path>) -> Outcome {
    let rc = load(source)?;
    let setup = Setup::new(&rc)?;
    let traj = match trajectory {
        Some(p) => load_trajectory(p)?,
        None => {
            let v = setup.initial_control(&rc)?;
            simulate_or_save_partial(&setup, &rc, v.values())?
        }
    };
    let report = energy_report(&traj, &setup.dk, setup.laws.as_ref())?;
    let csv = rc.output_path(&rc.output.diagnostics);
    emit_report(&csv, &traj, &report, &rc.output.plot_times)?;
    println!(
        "energy-report: {} steps, residual l1 {:.6e} -> {}",
        traj.n_steps(),
        report.residual_l1,
        csv.display()
    );
    Ok(EXIT_OK)
}

fn validate_laws(law: Option<&str>, source: &Source, samples: usize) -> Outcome {
    let spec = match (law, source.config.is_some() || source.preset.is_some()) {
        (Some(name), _) => {
            if !LAW_NAMES.contains(&name) {
                return Err(Failed(
                    EXIT_CONFIG,
                    format!("unknown law {name:?}, expected one of {}", LAW_NAMES.join(", ")),
                ));
            }
            LawSpec {
                name: name.to_string(),
                viscosity: chns::material::LinearViscosity::constant(1.0),
                convexity: 1.0,
                override_validation: true,
            }
        }
        (None, true) => LawSpec {
            override_validation: true,
            ..load(source)?.law
        },
        (None, false) => return Err(Failed(EXIT_CONFIG, "give --law, --config or --preset".into())),
    };
    if samples < 100 {
        return Err(Failed(EXIT_CONFIG, "--samples must be at least 100".into()));
    }
    let laws = build_laws(&spec)?;
    let report = validate(
        laws.as_ref(),
        ValidationOptions {
            n_samples: samples,
            ..ValidationOptions::default()
        },
    );
    for c in &report.checks {
        let at = if c.worst_sample.is_nan() {
            "-".to_string()
        } else {
            format!("{:+.6}", c.worst_sample)
        };
        println!(
            "{:<6} {:<4} worst s = {at:>9} value = {:.6e}  {}",
            if c.passed { "pass" } else { "FAIL" },
            c.name,
            c.worst_value,
            c.description
        );
    }
    let ok = report.all_passed();
    println!("validate-laws: {} {}", report.law_name, if ok { "all hypotheses hold" } else { "hypotheses violated" });
    Ok(if ok { EXIT_OK } else { EXIT_CHECK })
}
