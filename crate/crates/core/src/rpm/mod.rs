//! Robust penalty method.
//!
//! Constraints are folded into the objective as `F = J + Kᵀ·max(0, g)²`
//! with `g = G·U − w`. An outer loop raises the gains while the iterate is
//! infeasible, and an inverse-BFGS inner loop minimizes `F` for fixed gains.
//! Unlike the classic penalty method the outer loop does not stop on first
//! reaching the feasible region: it keeps minimizing (with the penalty
//! inactive) until the iterate stops moving, so interior optima and
//! infeasible starting points are both handled.

mod bfgs;

pub use bfgs::{
    backtracking_search, bfgs_direction, bfgs_solve, bfgs_update, BfgsOutcome, BfgsState, BfgsStop,
    MAX_LINE_SEARCH_TRIALS,
};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{mat_t_vec, Vector};
use crate::qp::{
    constraint_values, max_violation, objective, objective_gradient, positive_max, QpProblem, QpSolution,
    SolveStatus,
};

/// Initial inverse-Hessian approximation for each inner solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianInit {
    #[default]
    Identity,
    /// `H⁻¹` of the unpenalized objective, via Cholesky.
    ObjectiveInverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RpmConfig {
    /// Largest constraint violation accepted as feasible.
    pub slack_tol: f64,
    /// Relative-step tolerance shared by the inner and outer loops.
    pub conv_tol: f64,
    pub k_init: f64,
    pub k_growth: f64,
    pub k_max: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub ls_shrink: f64,
    pub ls_c: f64,
    pub curvature_eps: f64,
    pub hessian_init: HessianInit,
}

impl Default for RpmConfig {
    fn default() -> Self {
        Self {
            slack_tol: 1e-6,
            conv_tol: 1e-8,
            k_init: 0.1,
            k_growth: 10.0,
            k_max: 1e12,
            max_outer: 30,
            max_inner: 200,
            ls_shrink: 0.5,
            ls_c: 1e-4,
            curvature_eps: 1e-12,
            hessian_init: HessianInit::Identity,
        }
    }
}

impl RpmConfig {
    pub fn validate(&self) -> Result<()> {
        let checks: [(bool, &str); 10] = [
            (self.slack_tol > 0.0, "slack_tol must be > 0"),
            (self.conv_tol > 0.0, "conv_tol must be > 0"),
            (self.k_init > 0.0, "k_init must be > 0"),
            (self.k_growth > 1.0, "k_growth must be > 1"),
            (self.k_max >= self.k_init && self.k_max.is_finite(), "k_max must be finite and >= k_init"),
            (self.max_outer >= 1, "max_outer must be >= 1"),
            (self.max_inner >= 1, "max_inner must be >= 1"),
            (self.ls_shrink > 0.0 && self.ls_shrink < 1.0, "ls_shrink must lie in (0, 1)"),
            (self.ls_c > 0.0 && self.ls_c < 1.0, "ls_c must lie in (0, 1)"),
            (self.curvature_eps > 0.0, "curvature_eps must be > 0"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::InvalidConfig((*msg).to_string())),
            None => Ok(()),
        }
    }
}

/// `Σ K_i · max(0, g_i)²`.
pub fn penalty(g: &Vector, gains: &Vector) -> Result<f64> {
    check_dim("penalty gains", g.len(), gains.len())?;
    Ok(g.iter()
        .zip(gains.iter())
        .map(|(gi, k)| k * gi.max(0.0).powi(2))
        .sum())
}

/// `J(U) + Kᵀ·max(0, G·U − w)²`.
pub fn augmented_objective(qp: &QpProblem, gains: &Vector, u: &Vector) -> Result<f64> {
    check_dim("penalty gains", qp.num_constraints(), gains.len())?;
    Ok(objective(qp, u)? + penalty(&constraint_values(qp, u)?, gains)?)
}

/// `H·U + f + 2·Gᵀ·(K ⊙ max(0, G·U − w))`; rows with `g_i = 0` contribute nothing.
pub fn augmented_gradient(qp: &QpProblem, gains: &Vector, u: &Vector) -> Result<Vector> {
    check_dim("penalty gains", qp.num_constraints(), gains.len())?;
    let grad = objective_gradient(qp, u)?;
    let g = constraint_values(qp, u)?;
    if g.iter().all(|v| *v <= 0.0) {
        return Ok(grad);
    }
    let weights: Vector = g
        .iter()
        .zip(gains.iter())
        .map(|(gi, k)| 2.0 * k * gi.max(0.0))
        .collect();
    grad.add(&mat_t_vec(qp.g(), &weights)?)
}

/// Per-outer-iteration record of an [`rpm_solve_logged`] run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OuterRecord {
    /// Gain applied to every row during this iteration.
    pub gain: f64,
    pub violation_before: f64,
    pub violation_after: f64,
    pub inner_iterations: usize,
    pub relative_step: f64,
}

pub fn rpm_solve(qp: &QpProblem, cfg: &RpmConfig, u0: &Vector) -> QpSolution {
    rpm_solve_logged(qp, cfg, u0).0
}

/// [`rpm_solve`] that also returns the outer-loop history.
///
/// Gain schedule: the first time an iterate violates the constraints by more
/// than `slack_tol` the gains are set to `k_init`; every later infeasible
/// iteration multiplies them by `k_growth` up to `k_max`. Gains never
/// decrease within a solve. A feasible start runs with zero gains, in which
/// case the inner solve stops as soon as it leaves the feasible region.
///
/// Invalid configurations and dimension errors yield `NumericalFailure`
/// with the starting point echoed back.
pub fn rpm_solve_logged(qp: &QpProblem, cfg: &RpmConfig, u0: &Vector) -> (QpSolution, Vec<OuterRecord>) {
    let mut log = Vec::new();
    match run(qp, cfg, u0, &mut log) {
        Ok(sol) => (sol, log),
        Err(_) => {
            let u = if u0.len() == qp.dim() { u0.clone() } else { Vector::zeros(qp.dim()) };
            let violation = max_violation(qp, &u).unwrap_or(0.0);
            let sol = finish(qp, u, &log, SolveStatus::NumericalFailure, violation);
            (sol, log)
        }
    }
}

fn finish(qp: &QpProblem, u: Vector, log: &[OuterRecord], status: SolveStatus, max_violation: f64) -> QpSolution {
    let objective = objective(qp, &u).unwrap_or(f64::NAN);
    QpSolution {
        u_star: u,
        objective,
        status,
        outer_iterations: log.len(),
        inner_iterations: log.iter().map(|r| r.inner_iterations).sum(),
        max_violation,
    }
}

fn run(qp: &QpProblem, cfg: &RpmConfig, u0: &Vector, log: &mut Vec<OuterRecord>) -> Result<QpSolution> {
    cfg.validate()?;
    check_dim("initial point", qp.dim(), u0.len())?;
    let q = qp.num_constraints();
    let init = bfgs::initial_inverse_hessian(qp, cfg)?;

    let mut u = u0.clone();
    let mut gain = 0.0_f64;
    let mut constraints = constraint_values(qp, &u)?;
    let mut violation = positive_max(&constraints);

    for _ in 0..cfg.max_outer {
        let violation_before = violation;
        if violation > cfg.slack_tol {
            gain = if gain == 0.0 {
                cfg.k_init
            } else {
                (gain * cfg.k_growth).min(cfg.k_max)
            };
        }
        let gains = Vector::filled(q, gain);
        let inner = match bfgs::minimize(qp, &gains, &u, Some(&constraints), cfg, &init) {
            Ok(outcome) => outcome,
            Err(_) => {
                let sol = finish(qp, u, log, SolveStatus::NumericalFailure, violation);
                return Ok(sol);
            }
        };
        let relative_step = inner.u.sub(&u)?.norm_inf() / u.norm_inf().max(1.0);
        u = inner.u;
        constraints = inner.constraints;
        violation = positive_max(&constraints);
        log.push(OuterRecord {
            gain,
            violation_before,
            violation_after: violation,
            inner_iterations: inner.iterations,
            relative_step,
        });

        let settled = relative_step < cfg.conv_tol;
        if violation <= cfg.slack_tol && settled {
            return Ok(finish(qp, u, log, SolveStatus::Optimal, violation));
        }
        if violation > cfg.slack_tol && settled && gain >= cfg.k_max {
            return Ok(finish(qp, u, log, SolveStatus::Infeasible, violation));
        }
    }

    let status = if violation > cfg.slack_tol && gain >= cfg.k_max {
        SolveStatus::Infeasible
    } else {
        SolveStatus::MaxIterations
    };
    Ok(finish(qp, u, log, status, violation))
}

/// Drives the total squared violation of `G·U ≤ w − margin` to zero with a
/// zero objective, starting from `u0`. Returns the final iterate.
pub(crate) fn minimize_violation(qp: &QpProblem, u0: &Vector, margin: f64) -> Result<Vector> {
    let n = qp.dim();
    let shifted: Vector = qp.w().iter().map(|w| w - margin).collect();
    let phase = QpProblem::new_unchecked(
        crate::linalg::Matrix::zeros(n, n),
        Vector::zeros(n),
        qp.g().clone(),
        shifted,
    );
    let cfg = RpmConfig {
        conv_tol: 1e-14,
        max_inner: 500,
        ..RpmConfig::default()
    };
    let gains = Vector::filled(qp.num_constraints(), 1.0);
    let init = crate::linalg::Matrix::identity(n);
    let mut u = u0.clone();
    for _ in 0..10 {
        let out = bfgs::minimize(&phase, &gains, &u, None, &cfg, &init)?;
        u = out.u;
        if out.value == 0.0 {
            break;
        }
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::problems::{qptest, QPTEST_OBJECTIVE, QPTEST_OPTIMUM};

    #[test]
    fn penalty_examples() {
        let k = Vector::filled(2, 0.1);
        assert_eq!(penalty(&Vector::from_slice(&[-1.0, 0.0]), &k).unwrap(), 0.0);
        assert!((penalty(&Vector::from_slice(&[1.0, -1.0]), &k).unwrap() - 0.1).abs() < 1e-15);
        let k = Vector::from_slice(&[1.0, 10.0]);
        assert_eq!(penalty(&Vector::from_slice(&[2.0, 3.0]), &k).unwrap(), 94.0);
        assert!(penalty(&Vector::zeros(2), &Vector::zeros(3)).is_err());
    }

    #[test]
    fn augmented_objective_examples() {
        let t = qptest();
        let k = Vector::filled(5, 0.1);
        let v = augmented_objective(&t, &k, &Vector::zeros(2)).unwrap();
        assert!((v - 0.4).abs() < 1e-15);
        let inside = Vector::from_slice(&[1.0, 1.0]);
        assert_eq!(
            augmented_objective(&t, &k, &inside).unwrap(),
            objective(&t, &inside).unwrap()
        );
        let outside = Vector::from_slice(&[-3.0, 4.0]);
        assert_eq!(
            augmented_objective(&t, &Vector::zeros(5), &outside).unwrap(),
            objective(&t, &outside).unwrap()
        );
    }

    #[test]
    fn augmented_gradient_examples() {
        let t = qptest();
        let inside = Vector::from_slice(&[1.0, 1.0]);
        let k = Vector::filled(5, 3.0);
        assert_eq!(
            augmented_gradient(&t, &k, &inside).unwrap(),
            objective_gradient(&t, &inside).unwrap()
        );
        let outside = Vector::from_slice(&[-3.0, 4.0]);
        assert_eq!(
            augmented_gradient(&t, &Vector::zeros(5), &outside).unwrap(),
            objective_gradient(&t, &outside).unwrap()
        );
        // Exactly on the first row's boundary: the hinge adds nothing.
        let boundary = Vector::from_slice(&[1.0, 0.0]);
        assert_eq!(
            augmented_gradient(&t, &k, &boundary).unwrap(),
            objective_gradient(&t, &boundary).unwrap()
        );
    }

    #[test]
    fn config_validation() {
        assert!(RpmConfig::default().validate().is_ok());
        let bad = RpmConfig { k_growth: 1.0, ..RpmConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        let bad = RpmConfig { ls_shrink: 1.0, ..RpmConfig::default() };
        assert!(bad.validate().is_err());
        let sol = rpm_solve(&qptest(), &RpmConfig { slack_tol: 0.0, ..RpmConfig::default() }, &Vector::zeros(2));
        assert_eq!(sol.status, SolveStatus::NumericalFailure);
    }

    #[test]
    fn qptest_from_infeasible_origin() {
        let (sol, log) = rpm_solve_logged(&qptest(), &RpmConfig::default(), &Vector::zeros(2));
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - QPTEST_OBJECTIVE).abs() < 1e-4, "{}", sol.objective);
        assert!((sol.u_star[0] - QPTEST_OPTIMUM[0]).abs() < 1e-4);
        assert!((sol.u_star[1] - QPTEST_OPTIMUM[1]).abs() < 1e-4);
        assert!(sol.max_violation <= 1e-6);
        assert_eq!(log[0].gain, 0.1);
        assert!(log.windows(2).all(|w| w[1].gain >= w[0].gain));
    }

    #[test]
    fn interior_optimum_is_reached_past_first_feasibility() {
        let box_rows = Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]);
        let qp = QpProblem::new(
            Matrix::diagonal(&[2.0, 2.0]),
            Vector::from_slice(&[-2.0, 0.0]),
            box_rows,
            Vector::filled(4, 10.0),
        )
        .unwrap();
        for start in [[0.0, 0.0], [30.0, -40.0]] {
            let sol = rpm_solve(&qp, &RpmConfig::default(), &Vector::from_slice(&start));
            assert_eq!(sol.status, SolveStatus::Optimal);
            assert!((sol.u_star[0] - 1.0).abs() < 1e-6 && sol.u_star[1].abs() < 1e-6, "{:?}", sol.u_star);
        }
    }

    #[test]
    fn deep_infeasible_start_matches() {
        let a = rpm_solve(&qptest(), &RpmConfig::default(), &Vector::zeros(2));
        let b = rpm_solve(&qptest(), &RpmConfig::default(), &Vector::from_slice(&[-50.0, -50.0]));
        assert_eq!(b.status, SolveStatus::Optimal);
        assert!(a.u_star.sub(&b.u_star).unwrap().norm_inf() < 1e-4);
    }

    #[test]
    fn contradictory_rows_report_infeasible() {
        let qp = QpProblem::new(
            Matrix::identity(1),
            Vector::zeros(1),
            Matrix::from_rows(&[[1.0], [-1.0]]),
            Vector::from_slice(&[0.0, -1.0]),
        )
        .unwrap();
        let sol = rpm_solve(&qp, &RpmConfig::default(), &Vector::zeros(1));
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn feasibility_phase_finds_interior_point() {
        let t = qptest();
        let u = minimize_violation(&t, &Vector::from_slice(&[-50.0, -50.0]), 1e-3).unwrap();
        assert!(positive_max(&constraint_values(&t, &u).unwrap()) <= 0.0);
    }
}
