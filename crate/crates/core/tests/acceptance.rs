//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Exits 0 after printing every line so the rest of the workspace tests
//! still run; set `RPMQP_ACCEPTANCE_STRICT=1` to exit 1 when any
//! criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpmqp::aircraft::ScenarioConfig;
use rpmqp::bench::{paired_step_timing, run_aircraft, run_qptest, run_random_suite, QpSolver};
use rpmqp::linalg::{cholesky_factor, cholesky_solve};
use rpmqp::par::Execution;
use rpmqp::problems::{instance_rng, qptest, random_point, random_qp, random_spd, QPTEST_OBJECTIVE};
use rpmqp::qp::{constraint_values, max_violation};
use rpmqp::rpm::{augmented_gradient, augmented_objective, bfgs_solve};
use rpmqp::{rpm_solve, QpProblem, RpmConfig, SolveStatus, Vector};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn qptest_optimum() -> Outcome {
    let cfg = RpmConfig::default();
    let started = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for solver in [QpSolver::Rpm, QpSolver::Asm, QpSolver::Oracle] {
        let r = run_qptest(solver, &cfg).map_err(|e| e.to_string())?;
        ok &= r.status == SolveStatus::Optimal && (r.objective - QPTEST_OBJECTIVE).abs() <= 1e-4;
        parts.push(format!("{solver}={:.7}", r.objective));
    }
    let secs = started.elapsed().as_secs_f64();
    check(ok && secs < 1.0, format!("{} in {secs:.3}s", parts.join(" ")))
}

fn robustness() -> Outcome {
    let qp = qptest();
    let cfg = RpmConfig::default();
    let inside = Vector::from_slice(&[1.0, 1.0]);
    if max_violation(&qp, &inside).unwrap() > 0.0 {
        return Err("reference start is not feasible".into());
    }
    let base = rpm_solve(&qp, &cfg, &inside);
    let mut worst = 0.0_f64;
    let mut ok = base.status == SolveStatus::Optimal;
    for start in [[0.0, 0.0], [-50.0, -50.0], [20.0, 20.0]] {
        let sol = rpm_solve(&qp, &cfg, &Vector::from_slice(&start));
        ok &= sol.status == SolveStatus::Optimal;
        worst = worst.max(sol.u_star.sub(&base.u_star).unwrap().norm_inf());
    }
    check(ok && worst <= 1e-4, format!("max |U - U_feasible|inf = {worst:.2e}"))
}

fn oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let report = run_random_suite(200, 42, 8, 16, &RpmConfig::default(), Execution::default())
        .map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    check(
        report.passed() && report.instances.len() == 200 && secs < 60.0,
        format!(
            "failures={} max objective gap={:.2e} in {secs:.2}s",
            report.failures(),
            report.max_objective_gap()
        ),
    )
}

fn gradient_correctness() -> Outcome {
    let (mut checked, mut index, mut worst) = (0, 0u64, 0.0_f64);
    while checked < 100 {
        let mut rng = instance_rng(505, index);
        index += 1;
        let qp = random_qp(&mut rng, 8, 16).problem;
        let gains: Vector = (0..qp.num_constraints()).map(|_| 10f64.powf(rng.gen_range(-1.0..3.0))).collect();
        let u = random_point(&mut rng, qp.dim(), 3.0);
        if constraint_values(&qp, &u).unwrap().iter().any(|g| g.abs() < 1e-3) {
            continue;
        }
        let h = 1e-6;
        let exact = augmented_gradient(&qp, &gains, &u).unwrap();
        let fd: Vector = (0..u.len())
            .map(|j| {
                let mut up = u.as_slice().to_vec();
                let mut dn = up.clone();
                up[j] += h;
                dn[j] -= h;
                let fp = augmented_objective(&qp, &gains, &Vector::from_slice(&up)).unwrap();
                let fm = augmented_objective(&qp, &gains, &Vector::from_slice(&dn)).unwrap();
                (fp - fm) / (2.0 * h)
            })
            .collect();
        worst = worst.max(exact.sub(&fd).unwrap().norm_inf() / exact.norm_inf().max(1.0));
        checked += 1;
    }
    check(worst <= 1e-5, format!("100 samples, max relative error {worst:.2e}"))
}

fn bfgs_sanity() -> Outcome {
    let cfg = RpmConfig::default();
    let (mut worst_err, mut worst_iters, mut ok) = (0.0_f64, 0, true);
    for case in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(90_000 + case);
        let n = rng.gen_range(1..=10);
        let h = random_spd(&mut rng, n, 0.5);
        let f = random_point(&mut rng, n, 10.0);
        let qp = QpProblem::unconstrained(h.clone(), f.clone()).unwrap();
        let exact = cholesky_solve(&cholesky_factor(&h).unwrap(), &f.scale(-1.0)).unwrap();
        let out = bfgs_solve(&qp, &Vector::zeros(0), &random_point(&mut rng, n, 5.0), &cfg)
            .map_err(|e| e.to_string())?;
        let err = out.u.sub(&exact).unwrap().norm_inf();
        ok &= err <= 1e-6 && out.iterations <= 50;
        worst_err = worst_err.max(err);
        worst_iters = worst_iters.max(out.iterations);
    }
    check(ok, format!("100 cases, max error {worst_err:.2e}, max iterations {worst_iters}"))
}

fn aircraft_closed_loop() -> Outcome {
    let started = Instant::now();
    let report = run_aircraft(&ScenarioConfig::default(), Execution::default()).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    let rpm = report.run("rpm").ok_or("missing rpm run")?;
    let a = rpm.audit;
    check(
        a.passed() && rpm.report.status == SolveStatus::Optimal && rpm.tracking_error <= 0.02 && secs < 30.0,
        format!(
            "violations={} input/rate/output excess={:.1e}/{:.1e}/{:.1e} tracking error={:.2e} in {secs:.2}s",
            a.violations, a.input_excess, a.rate_excess, a.output_excess, rpm.tracking_error
        ),
    )
}

fn rcso_bound() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for n in [5, 10] {
        let report = run_aircraft(&ScenarioConfig { horizon: n, ..Default::default() }, Execution::default())
            .map_err(|e| e.to_string())?;
        ok &= report.rcso <= 1e-2;
        parts.push(format!("N={n}: {:.2e}", report.rcso));
    }
    check(ok, parts.join(", "))
}

/// Inner iterations stay bounded after warm-up, and RPM is not slower than
/// cold-start ASM on the same step problems.
fn iterations_and_timing() -> Outcome {
    let bound = inner_iteration_bound();
    let order = timing_order();
    let detail = |r: &Outcome| match r {
        Ok(d) | Err(d) => d.clone(),
    };
    check(bound.is_ok() && order.is_ok(), format!("(a) {}; (b) {}", detail(&bound), detail(&order)))
}

fn inner_iteration_bound() -> Outcome {
    let report = run_aircraft(&ScenarioConfig::default(), Execution::default()).map_err(|e| e.to_string())?;
    let stats = &report.run("rpm").ok_or("missing rpm run")?.trace.solver_stats;
    let warmup = stats[..10].iter().map(|s| s.inner_iterations).max().unwrap_or(0);
    let after = stats[10..].iter().map(|s| s.inner_iterations).max().unwrap_or(0);
    check(after <= warmup, format!("max inner iterations: steps 0-9 {warmup}, steps 10+ {after}"))
}

fn timing_order() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for n in [10, 20, 30, 50] {
        let t = paired_step_timing(&ScenarioConfig { horizon: n, ..Default::default() }, 7).map_err(|e| e.to_string())?;
        let (rpm, asm) = (t.rpm_median(), t.asm_median());
        ok &= rpm <= asm;
        parts.push(format!("N={n}: rpm {:.2}us asm {:.2}us", rpm * 1e6, asm * 1e6));
    }
    check(ok, parts.join(", "))
}

fn slack_sweep() -> Outcome {
    let mut iterations = Vec::new();
    let mut parts = Vec::new();
    let mut ok = true;
    for xi in [1e-4, 1e-6, 1e-9, 1e-12] {
        let cfg = ScenarioConfig { slack_tol: Some(xi), ..Default::default() };
        let report = run_aircraft(&cfg, Execution::default()).map_err(|e| e.to_string())?;
        let rpm = &report.run("rpm").ok_or("missing rpm run")?.report;
        ok &= rpm.status == SolveStatus::Optimal && rpm.max_violation <= xi;
        iterations.push(rpm.inner_iterations);
        parts.push(format!("xi={xi:e}: {} viol={:.2e} inner={}", rpm.status, rpm.max_violation, rpm.inner_iterations));
    }
    let inversions = iterations.windows(2).filter(|w| w[1] < w[0]).count();
    check(ok && inversions <= 1, format!("{}; inversions={inversions}", parts.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 qptest optimum", qptest_optimum),
        ("2 infeasible-start robustness", robustness),
        ("3 oracle equivalence", oracle_equivalence),
        ("4 gradient correctness", gradient_correctness),
        ("5 BFGS sanity", bfgs_sanity),
        ("6 aircraft closed loop", aircraft_closed_loop),
        ("7 RCSO bound", rcso_bound),
        ("8 iteration bound and timing order", iterations_and_timing),
        ("9 slack-tolerance sweep", slack_sweep),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 && std::env::var_os("RPMQP_ACCEPTANCE_STRICT").is_some() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
