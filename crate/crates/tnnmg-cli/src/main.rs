//! Command-line harness: build a shipped problem, run the solver, write the
//! convergence history as CSV, and print a one-line summary.
//!
//! Exit codes: 0 success, 2 usage error (unknown problem or flags), 3 solver
//! hit the iteration cap without converging, 4 numeric failure.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tnnmg::driver::{nested_solve, solve_problem, SolveConfig, SolveReport};
use tnnmg::error::Error;
use tnnmg::linsolve::{LinearSolverConfig, LinearSolverKind};
use tnnmg::problems::ProblemFamily;
use tnnmg::smoother::{LocalSolverKind, SmootherConfig};

#[derive(Parser)]
#[command(name = "tnnmg", version, about = "Nonsmooth Newton multigrid solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one of the shipped problems and report the convergence history.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Problem family: obstacle1d, obstacle2d, minsurf1d, phasefield1d,
    /// phasefield2d, friction1d.
    #[arg(long)]
    problem: String,
    /// Grid refinement level (interior nodes: 2^level - 1 per direction).
    #[arg(long, default_value_t = 5)]
    level: usize,
    #[arg(long = "max-iter", default_value_t = 100)]
    max_iter: usize,
    /// Stopping tolerance on the iterate increment norm.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Truncation activity tolerance.
    #[arg(long, default_value_t = 1e-10)]
    eps: f64,
    /// Curvature cap for singular-sum truncation.
    #[arg(long = "curvature-cap", default_value_t = 1e8)]
    curvature_cap: f64,
    /// Linear correction solver.
    #[arg(long, value_enum, default_value_t = LinearArg::Vcycle)]
    linear: LinearArg,
    /// Local smoother; defaults to the family's preferred solver.
    #[arg(long, value_enum)]
    smoother: Option<SmootherArg>,
    /// V-cycles per correction solve.
    #[arg(long, default_value_t = 1)]
    cycles: usize,
    /// Diagonal regularization of the semi-definite smoother.
    #[arg(long, default_value_t = 1e-8)]
    alpha: f64,
    /// Nested iteration: solve coarse levels first and prolong.
    #[arg(long)]
    nested: bool,
    /// Seed for the randomized problem data.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output path for the convergence history.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LinearArg {
    Vcycle,
    Cg,
    Dense,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SmootherArg {
    Exact,
    Pgs,
    Model,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => match run(&args) {
            Ok(code) => code,
            Err(err) => {
                eprintln!("error: {err}");
                match err {
                    Error::Usage(_) => ExitCode::from(2),
                    Error::Numeric(_) | Error::Internal(_) => ExitCode::from(4),
                }
            }
        },
    }
}

fn run(args: &RunArgs) -> Result<ExitCode, Error> {
    let Some(family) = ProblemFamily::from_name(&args.problem) else {
        let names: Vec<&str> = ProblemFamily::all().iter().map(|f| f.name()).collect();
        return Err(Error::usage(format!(
            "unknown problem '{}'; available: {}",
            args.problem,
            names.join(", ")
        )));
    };

    let probe = family.build(args.level, args.seed)?;
    let cfg = SolveConfig {
        max_iterations: args.max_iter,
        increment_tol: args.tol,
        truncation_eps: args.eps,
        curvature_cap: args.curvature_cap,
        smoother: SmootherConfig {
            kind: match args.smoother {
                Some(SmootherArg::Exact) => LocalSolverKind::ExactBisection,
                Some(SmootherArg::Pgs) => LocalSolverKind::PolyhedralGs,
                Some(SmootherArg::Model) => LocalSolverKind::DominatingModel,
                None => probe.default_smoother,
            },
            ..SmootherConfig::default()
        },
        linear: LinearSolverConfig {
            kind: match args.linear {
                LinearArg::Vcycle => LinearSolverKind::VCycle,
                LinearArg::Cg => LinearSolverKind::Cg,
                LinearArg::Dense => LinearSolverKind::DensePseudoInverse,
            },
            alpha: args.alpha,
            cycles: args.cycles,
            ..LinearSolverConfig::default()
        },
        ..SolveConfig::default()
    };

    let seed = args.seed;
    let (finest_report, all_converged) = if args.nested {
        let (_, reports) = nested_solve(|l| family.build(l, seed), 1, args.level, &cfg)?;
        for (level, report) in &reports {
            print_summary(&format!("{} level={level}", family.name()), report);
        }
        let all = reports.iter().all(|(_, r)| r.converged);
        let (_, finest) = reports.into_iter().last().expect("at least one level");
        (finest, all)
    } else {
        let (_, report) = solve_problem(&probe, &cfg)?;
        print_summary(&format!("{} level={}", family.name(), args.level), &report);
        let conv = report.converged;
        (report, conv)
    };

    for w in &finest_report.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(path) = &args.out {
        std::fs::write(path, history_csv(&finest_report))
            .map_err(|e| Error::usage(format!("cannot write {}: {e}", path.display())))?;
    }

    Ok(if all_converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

fn print_summary(label: &str, report: &SolveReport) {
    let rate = report
        .mean_rate(5)
        .map_or("na".to_string(), |r| format!("{r:.3}"));
    println!(
        "{label} iterations={} converged={} final_energy={:.16e} mean_rate={rate}",
        report.iterations(),
        report.converged,
        report.final_energy
    );
}

fn history_csv(report: &SolveReport) -> String {
    let mut out = String::from(
        "iter,energy,energy_after_smoothing,correction_norm,damping,truncated_fraction,increment\n",
    );
    for (i, r) in report.records.iter().enumerate() {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            i + 1,
            r.energy,
            r.energy_after_smoothing,
            r.correction_norm,
            r.damping,
            r.truncated_fraction,
            r.increment
        )
        .expect("write to string");
    }
    out
}
