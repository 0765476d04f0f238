//! `rpmqp` — batch runs of the penalty-method QP solver and its baselines.
//!
//! Exit status: 0 when every run ended `Optimal` and every audit passed,
//! 1 when some run or audit did not, 2 on usage or I/O errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use rpmqp::aircraft::ScenarioConfig;
use rpmqp::bench::{
    reports_csv, run_aircraft, run_qptest, run_random_suite, solve_problem, QpSolver, RunReport,
};
use rpmqp::numfmt::sig9;
use rpmqp::par::Execution;
use rpmqp::{QpProblem, RpmConfig, SolveStatus};

#[derive(Debug, Parser)]
#[command(name = "rpmqp", version, about = "Penalty-method QP solver benchmarks")]
struct Cli {
    /// Directory for CSV and text outputs.
    #[arg(long, global = true, default_value = "./results")]
    out: PathBuf,
    /// Run batches on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Two-variable benchmark QP; all three solvers unless one is chosen.
    Qptest {
        #[arg(long)]
        solver: Option<QpSolver>,
        #[arg(long)]
        slack_tol: Option<f64>,
        #[arg(long)]
        conv_tol: Option<f64>,
    },
    /// Closed-loop altitude tracking with RPM and the active-set baseline.
    Aircraft {
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        tsim: Option<usize>,
        /// JSON scenario; flags override its fields.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Seeded random QPs checked against the enumeration oracle.
    Random {
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        nmax: usize,
        #[arg(long, default_value_t = 16)]
        qmax: usize,
    },
    /// Solve a QP stored as JSON (`H`, `f`, `G`, `w`).
    Solve {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long, default_value = "rpm")]
        solver: QpSolver,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn print_reports(reports: &[RunReport]) {
    for r in reports {
        println!("{}", r.to_json());
    }
}

fn run(cli: &Cli) -> Result<bool> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::default() };
    match &cli.command {
        Command::Qptest { solver, slack_tol, conv_tol } => {
            let mut cfg = RpmConfig::default();
            if let Some(tol) = slack_tol {
                cfg.slack_tol = *tol;
            }
            if let Some(tol) = conv_tol {
                cfg.conv_tol = *tol;
            }
            cfg.validate()?;
            let solvers = match solver {
                Some(s) => vec![*s],
                None => vec![QpSolver::Rpm, QpSolver::Asm, QpSolver::Oracle],
            };
            let reports = solvers.iter().map(|s| run_qptest(*s, &cfg)).collect::<rpmqp::Result<Vec<_>>>()?;
            print_reports(&reports);
            write(&cli.out, "qptest_reports.csv", &reports_csv(&reports))?;
            Ok(reports.iter().all(|r| r.status == SolveStatus::Optimal))
        }
        Command::Aircraft { horizon, tsim, scenario } => {
            let mut cfg = match scenario {
                Some(path) => ScenarioConfig::from_json_file(path)?,
                None => ScenarioConfig::default(),
            };
            if let Some(n) = horizon {
                cfg.horizon = *n;
            }
            if let Some(t) = tsim {
                cfg.t_sim = *t;
            }
            cfg.validate()?;
            let report = run_aircraft(&cfg, exec)?;
            report.write_to(&cli.out)?;
            print!("{}", report.summary_csv());
            println!("rcso: {}", sig9(report.rcso));
            for run in &report.runs {
                let a = &run.audit;
                println!(
                    "{} audit: violations={} input_excess={} rate_excess={} output_excess={}",
                    run.controller.name(),
                    a.violations,
                    sig9(a.input_excess),
                    sig9(a.rate_excess),
                    sig9(a.output_excess)
                );
            }
            Ok(report.passed())
        }
        Command::Random { count, seed, nmax, qmax } => {
            let report = run_random_suite(*count, *seed, *nmax, *qmax, &RpmConfig::default(), exec)?;
            print!("{}", report.summary_text());
            write(&cli.out, "random_summary.txt", &report.summary_text())?;
            write(&cli.out, "random_instances.csv", &report.instances_csv())?;
            Ok(report.passed())
        }
        Command::Solve { problem, solver } => {
            let qp = QpProblem::from_json_file(problem)?;
            let name = problem.file_stem().and_then(|s| s.to_str()).unwrap_or("problem");
            let report = solve_problem(&qp, name, *solver, &RpmConfig::default())?;
            print_reports(std::slice::from_ref(&report));
            write(&cli.out, &format!("solve_{name}_{solver}.csv"), &reports_csv(std::slice::from_ref(&report)))?;
            Ok(report.status == SolveStatus::Optimal)
        }
    }
}
