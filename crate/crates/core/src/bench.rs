//! Batch runs behind the `rpmqp` command line: the qptest problem, the
//! aircraft closed loop and seeded random suites checked against the
//! enumeration oracle.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aircraft::{aircraft_scenario, Scenario, ScenarioConfig, ALTITUDE};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::mpc::{closed_loop_simulate, rcso, shift_warm_start, Condenser, Controller, Trace};
use crate::numfmt::sig9;
use crate::par::Execution;
use crate::problems::{instance_rng, qptest, random_qp};
use crate::qp::{QpProblem, QpSolution, SolveStatus};
use crate::reference::{active_set_solve_cold, kkt_enumerate};
use crate::rpm::{rpm_solve, RpmConfig};

/// Iteration cap for the active-set baseline in batch runs.
pub const ASM_MAX_ITERS: usize = 500;

/// Largest random instance the enumeration oracle is asked to solve.
pub const RANDOM_MAX_DIM: usize = 8;
pub const RANDOM_MAX_CONSTRAINTS: usize = 16;

/// Slack on constraint audits of closed-loop traces.
pub const AUDIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QpSolver {
    Rpm,
    Asm,
    Oracle,
}

impl QpSolver {
    pub fn as_str(self) -> &'static str {
        match self {
            QpSolver::Rpm => "rpm",
            QpSolver::Asm => "asm",
            QpSolver::Oracle => "oracle",
        }
    }
}

impl fmt::Display for QpSolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QpSolver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rpm" => Ok(QpSolver::Rpm),
            "asm" => Ok(QpSolver::Asm),
            "oracle" => Ok(QpSolver::Oracle),
            other => Err(Error::InvalidConfig(format!("unknown solver {other:?}"))),
        }
    }
}

/// One solver run on one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub solver: String,
    pub problem: String,
    pub objective: f64,
    pub status: SolveStatus,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Host wall time; informational only.
    pub wall_seconds: f64,
    pub max_violation: f64,
}

impl RunReport {
    pub const CSV_HEADER: &'static str =
        "solver,problem,objective,status,outer_iterations,inner_iterations,wall_seconds,max_violation";

    fn from_solution(solver: &str, problem: &str, sol: &QpSolution, wall_seconds: f64) -> Self {
        Self {
            solver: solver.into(),
            problem: problem.into(),
            objective: sol.objective,
            status: sol.status,
            outer_iterations: sol.outer_iterations,
            inner_iterations: sol.inner_iterations,
            wall_seconds,
            max_violation: sol.max_violation,
        }
    }

    /// Floats use the shortest representation that parses back to the same
    /// value, so the row round-trips exactly.
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{:?},{},{},{},{:?},{:?}",
            self.solver,
            self.problem,
            self.objective,
            self.status,
            self.outer_iterations,
            self.inner_iterations,
            self.wall_seconds,
            self.max_violation
        )
    }

    pub fn from_csv_row(row: &str) -> Result<Self> {
        let bad = |what: &str| Error::InvalidConfig(format!("malformed report row ({what}): {row}"));
        let fields: Vec<&str> = row.trim_end().split(',').collect();
        if fields.len() != 8 {
            return Err(bad("field count"));
        }
        let float = |s: &str| s.parse::<f64>().map_err(|_| bad("number"));
        let count = |s: &str| s.parse::<usize>().map_err(|_| bad("count"));
        let status = match fields[3] {
            "Optimal" => SolveStatus::Optimal,
            "MaxIterations" => SolveStatus::MaxIterations,
            "Infeasible" => SolveStatus::Infeasible,
            "NumericalFailure" => SolveStatus::NumericalFailure,
            _ => return Err(bad("status")),
        };
        Ok(Self {
            solver: fields[0].into(),
            problem: fields[1].into(),
            objective: float(fields[2])?,
            status,
            outer_iterations: count(fields[4])?,
            inner_iterations: count(fields[5])?,
            wall_seconds: float(fields[6])?,
            max_violation: float(fields[7])?,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

pub fn reports_csv(reports: &[RunReport]) -> String {
    let mut out = String::from(RunReport::CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

/// Solves `qp` with the chosen solver; RPM starts from the origin.
pub fn solve_problem(qp: &QpProblem, name: &str, solver: QpSolver, cfg: &RpmConfig) -> Result<RunReport> {
    let started = Instant::now();
    let sol = match solver {
        QpSolver::Rpm => rpm_solve(qp, cfg, &Vector::zeros(qp.dim())),
        QpSolver::Asm => active_set_solve_cold(qp, ASM_MAX_ITERS)?,
        QpSolver::Oracle => kkt_enumerate(qp)?,
    };
    Ok(RunReport::from_solution(solver.as_str(), name, &sol, started.elapsed().as_secs_f64()))
}

pub fn run_qptest(solver: QpSolver, cfg: &RpmConfig) -> Result<RunReport> {
    solve_problem(&qptest(), "qptest", solver, cfg)
}

/// Bound excess found over a closed-loop trace.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstraintAudit {
    pub input_excess: f64,
    pub rate_excess: f64,
    pub output_excess: f64,
    /// Samples exceeding any bound by more than [`AUDIT_TOL`].
    pub violations: usize,
}

impl ConstraintAudit {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Checks every recorded input, move and output against the spec bounds.
pub fn audit_trace(scenario: &Scenario, trace: &Trace) -> ConstraintAudit {
    let spec = &scenario.spec;
    let mut audit = ConstraintAudit::default();
    let mut prev = scenario.u_init_prev.clone();
    for (u, y) in trace.u.iter().zip(&trace.y) {
        let du: Vec<f64> = u.iter().zip(prev.iter()).map(|(a, b)| a - b).collect();
        let checks = [
            (&mut audit.input_excess, spec.input.excess(u)),
            (&mut audit.rate_excess, spec.rate.excess(&du)),
            (&mut audit.output_excess, spec.output.excess(y)),
        ];
        for (worst, e) in checks {
            *worst = worst.max(e);
            if e > AUDIT_TOL {
                audit.violations += 1;
            }
        }
        prev = u.clone();
    }
    audit
}

/// Largest relative altitude error over the final 20% of the run.
pub fn final_tracking_error(trace: &Trace) -> f64 {
    let start = trace.len() - trace.len() / 5;
    trace.y[start..]
        .iter()
        .zip(&trace.y_ref[start..])
        .map(|(y, r)| {
            let scale = r[ALTITUDE].abs().max(1.0);
            (y[ALTITUDE] - r[ALTITUDE]).abs() / scale
        })
        .fold(0.0, f64::max)
}

/// Closed-loop run condensed into one report: the objective is the
/// cumulative stage cost, iterations and wall time are totals over steps.
fn trace_report(solver: &str, problem: &str, trace: &Trace) -> RunReport {
    let stats = &trace.solver_stats;
    let status = stats
        .iter()
        .map(|s| s.status)
        .find(|s| *s != SolveStatus::Optimal)
        .unwrap_or(SolveStatus::Optimal);
    RunReport {
        solver: solver.into(),
        problem: problem.into(),
        objective: trace.cumulative_cost,
        status,
        outer_iterations: stats.iter().map(|s| s.outer_iterations).sum(),
        inner_iterations: stats.iter().map(|s| s.inner_iterations).sum(),
        wall_seconds: stats.iter().map(|s| s.solve_seconds).sum(),
        max_violation: stats.iter().map(|s| s.max_violation).fold(0.0, f64::max),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AircraftRun {
    pub controller: Controller,
    pub trace: Trace,
    pub report: RunReport,
    pub audit: ConstraintAudit,
    pub tracking_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AircraftReport {
    pub scenario: Scenario,
    pub runs: Vec<AircraftRun>,
    /// RPM relative to the active-set baseline.
    pub rcso: f64,
}

impl AircraftReport {
    pub fn run(&self, name: &str) -> Option<&AircraftRun> {
        self.runs.iter().find(|r| r.controller.name() == name)
    }

    /// Every step solved to optimality and no bound exceeded.
    pub fn passed(&self) -> bool {
        self.runs
            .iter()
            .all(|r| r.report.status == SolveStatus::Optimal && r.audit.passed())
            && self.rcso.is_finite()
    }

    pub const SUMMARY_HEADER: &'static str = "solver,horizon,steps,mean_solve_seconds,mean_outer_iters,\
mean_inner_iters,max_inner_iters,held_steps,cumulative_cost,max_violation,tracking_error";

    /// Per-solver averages, one CSV row each.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(Self::SUMMARY_HEADER);
        out.push('\n');
        for run in &self.runs {
            let stats = &run.trace.solver_stats;
            let steps = stats.len().max(1) as f64;
            let fields = [
                run.controller.name().to_string(),
                self.scenario.spec.horizon.to_string(),
                stats.len().to_string(),
                sig9(run.report.wall_seconds / steps),
                sig9(run.report.outer_iterations as f64 / steps),
                sig9(run.report.inner_iterations as f64 / steps),
                stats.iter().map(|s| s.inner_iterations).max().unwrap_or(0).to_string(),
                stats.iter().filter(|s| s.held_input).count().to_string(),
                sig9(run.trace.cumulative_cost),
                sig9(run.report.max_violation),
                sig9(run.tracking_error),
            ];
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }

    pub fn rcso_csv(&self) -> String {
        format!("horizon,solver,reference,rcso\n{},rpm,asm,{}\n", self.scenario.spec.horizon, sig9(self.rcso))
    }

    /// Writes traces, summary, RCSO table and the run reports into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::InvalidConfig(format!("cannot write to {}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        let n = self.scenario.spec.horizon;
        for run in &self.runs {
            run.trace.write_csv(dir.join(format!("aircraft_N{n}_{}_trace.csv", run.controller.name())))?;
        }
        std::fs::write(dir.join(format!("aircraft_N{n}_summary.csv")), self.summary_csv()).map_err(io)?;
        std::fs::write(dir.join(format!("aircraft_N{n}_rcso.csv")), self.rcso_csv()).map_err(io)?;
        let reports: Vec<RunReport> = self.runs.iter().map(|r| r.report.clone()).collect();
        std::fs::write(dir.join(format!("aircraft_N{n}_reports.csv")), reports_csv(&reports)).map_err(io)?;
        Ok(())
    }
}

/// Runs the aircraft scenario with RPM and the cold-start active-set
/// baseline. The two simulations are independent and share only the spec.
pub fn run_aircraft(cfg: &ScenarioConfig, exec: Execution) -> Result<AircraftReport> {
    let scenario = aircraft_scenario(cfg)?;
    let controllers = [Controller::Rpm(cfg.rpm_config()), Controller::ActiveSet { max_iters: ASM_MAX_ITERS }];
    let problem = format!("aircraft_N{}", cfg.horizon);
    let runs = exec.map(controllers.len(), |i| -> Result<AircraftRun> {
        let controller = controllers[i].clone();
        let trace = closed_loop_simulate(
            &scenario.spec,
            &controller,
            &scenario.x_init,
            &scenario.u_init_prev,
            &scenario.y_ref,
            scenario.t_sim,
        )?;
        Ok(AircraftRun {
            report: trace_report(controller.name(), &problem, &trace),
            audit: audit_trace(&scenario, &trace),
            tracking_error: final_tracking_error(&trace),
            controller,
            trace,
        })
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let rcso = rcso(&runs[0].trace, &runs[1].trace)?;
    Ok(AircraftReport { scenario, runs, rcso })
}

/// Per-step solve times of both solvers on identical horizon QPs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedTiming {
    pub horizon: usize,
    pub rpm_seconds: Vec<f64>,
    pub asm_seconds: Vec<f64>,
}

impl PairedTiming {
    pub fn rpm_median(&self) -> f64 {
        median(&self.rpm_seconds)
    }

    pub fn asm_median(&self) -> f64 {
        median(&self.asm_seconds)
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

fn best_of<T>(repeats: usize, mut job: impl FnMut() -> T) -> (T, f64) {
    let mut best = f64::INFINITY;
    let mut out = None;
    for _ in 0..repeats.max(1) {
        let started = Instant::now();
        let value = job();
        best = best.min(started.elapsed().as_secs_f64());
        out = Some(value);
    }
    (out.expect("at least one repeat"), best)
}

/// Follows the RPM closed loop and, at every step, times the warm-started
/// RPM solve and a cold active-set solve of the same QP. Each time is the
/// best of `repeats` runs, which filters scheduler noise out of
/// microsecond-scale measurements.
pub fn paired_step_timing(cfg: &ScenarioConfig, repeats: usize) -> Result<PairedTiming> {
    let sc = aircraft_scenario(cfg)?;
    let rpm_cfg = cfg.rpm_config();
    let condenser = Condenser::new(&sc.spec)?;
    let (l, nh) = (sc.spec.model.inputs(), sc.spec.horizon);
    let mut x = sc.x_init.clone();
    let mut u_prev = sc.u_init_prev.clone();
    let mut plan = Vector::zeros(nh * l);
    let mut timing = PairedTiming { horizon: nh, rpm_seconds: Vec::new(), asm_seconds: Vec::new() };
    for t in 0..sc.t_sim {
        let preview: Vec<Vector> = (1..=nh).map(|k| sc.y_ref[(t + k).min(sc.y_ref.len() - 1)].clone()).collect();
        let qp = condenser.problem(&x, &u_prev, &preview)?;
        let warm = if t == 0 { plan.clone() } else { shift_warm_start(&plan, nh, l)? };
        let (sol, rpm_time) = best_of(repeats, || rpm_solve(&qp, &rpm_cfg, &warm));
        let (_, asm_time) = best_of(repeats, || active_set_solve_cold(&qp, ASM_MAX_ITERS));
        timing.rpm_seconds.push(rpm_time);
        timing.asm_seconds.push(asm_time);
        let u = if sol.status == SolveStatus::Optimal {
            plan = sol.u_star.clone();
            Vector::from_slice(&sol.u_star.as_slice()[..l])
        } else {
            plan = warm;
            u_prev.clone()
        };
        let (x_next, _) = crate::mpc::step_plant(&sc.spec.model, &x, &u)?;
        x = x_next;
        u_prev = u;
    }
    Ok(timing)
}

/// RPM against the enumeration oracle on one seeded instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub index: usize,
    pub n: usize,
    pub q: usize,
    pub rpm_objective: f64,
    pub oracle_objective: f64,
    pub objective_gap: f64,
    pub solution_gap: f64,
    pub status: SolveStatus,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSuiteReport {
    pub count: usize,
    pub seed: u64,
    pub nmax: usize,
    pub qmax: usize,
    pub instances: Vec<InstanceResult>,
}

impl RandomSuiteReport {
    pub fn failures(&self) -> usize {
        self.instances.iter().filter(|r| !r.ok).count()
    }

    pub fn max_objective_gap(&self) -> f64 {
        self.instances.iter().map(|r| r.objective_gap).fold(0.0, f64::max)
    }

    pub fn max_solution_gap(&self) -> f64 {
        self.instances.iter().map(|r| r.solution_gap).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.failures() == 0
    }

    /// Deterministic for a fixed seed and caps.
    pub fn summary_text(&self) -> String {
        format!(
            "random suite: count={} seed={} nmax={} qmax={}\nmax objective gap: {}\nmax solution gap: {}\nfailures: {}\n",
            self.count,
            self.seed,
            self.nmax,
            self.qmax,
            sig9(self.max_objective_gap()),
            sig9(self.max_solution_gap()),
            self.failures()
        )
    }

    pub fn instances_csv(&self) -> String {
        let mut out =
            String::from("index,n,q,rpm_objective,oracle_objective,objective_gap,solution_gap,status,ok\n");
        for r in &self.instances {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.index,
                r.n,
                r.q,
                sig9(r.rpm_objective),
                sig9(r.oracle_objective),
                sig9(r.objective_gap),
                sig9(r.solution_gap),
                r.status,
                r.ok
            );
        }
        out
    }
}

/// Objective agreement required between RPM and the oracle.
pub fn objective_tolerance(objective: f64) -> f64 {
    (1e-4 * objective.abs()).max(1e-6)
}

/// Solves `count` seeded random QPs with RPM (from the origin) and the
/// enumeration oracle. Instance `i` depends only on `(seed, i)`, so the
/// report is the same for every execution mode.
pub fn run_random_suite(
    count: usize,
    seed: u64,
    nmax: usize,
    qmax: usize,
    cfg: &RpmConfig,
    exec: Execution,
) -> Result<RandomSuiteReport> {
    if nmax == 0 || nmax > RANDOM_MAX_DIM || qmax > RANDOM_MAX_CONSTRAINTS {
        return Err(Error::InvalidConfig(format!(
            "caps must satisfy 1 <= nmax <= {RANDOM_MAX_DIM} and qmax <= {RANDOM_MAX_CONSTRAINTS}"
        )));
    }
    cfg.validate()?;
    let instances = exec.map(count, |index| {
        let mut rng = instance_rng(seed, index as u64);
        let inst = random_qp(&mut rng, nmax, qmax);
        let qp = &inst.problem;
        let rpm = rpm_solve(qp, cfg, &Vector::zeros(qp.dim()));
        let (oracle_objective, solution_gap) = match kkt_enumerate(qp) {
            Ok(o) => (
                o.objective,
                rpm.u_star.iter().zip(o.u_star.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
            ),
            Err(_) => (f64::NAN, f64::NAN),
        };
        let objective_gap = (rpm.objective - oracle_objective).abs();
        InstanceResult {
            index,
            n: qp.dim(),
            q: qp.num_constraints(),
            rpm_objective: rpm.objective,
            oracle_objective,
            objective_gap,
            solution_gap,
            status: rpm.status,
            ok: rpm.status == SolveStatus::Optimal && objective_gap <= objective_tolerance(oracle_objective),
        }
    });
    Ok(RandomSuiteReport { count, seed, nmax, qmax, instances })
}
