//! Condensed QP data model: `min ½ UᵀHU + fᵀU  s.t.  G·U ≤ w`.
//!
//! Every inequality is stored in `≤` form. Lower bounds and `≥` rows are
//! negated by whoever builds the problem. The objective carries no
//! additive constant.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{cholesky_factor, cholesky_solve, dot, mat_t_vec, mat_vec, Matrix, Vector};

/// Relative asymmetry tolerated in `H`.
pub const HESSIAN_SYMMETRY_TOL: f64 = 1e-10;

/// Dense strictly convex QP.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    h: Matrix,
    f: Vector,
    g: Matrix,
    w: Vector,
}

impl QpProblem {
    /// Validates shapes, symmetry and positive definiteness of `h`.
    ///
    /// `h` is symmetrized after the check so later solves see exact symmetry.
    pub fn new(h: Matrix, f: Vector, g: Matrix, w: Vector) -> Result<Self> {
        let n = f.len();
        check_dim("H rows", n, h.rows())?;
        check_dim("H cols", n, h.cols())?;
        check_dim("G cols", n, g.cols())?;
        check_dim("w length", g.rows(), w.len())?;
        let asymmetry = h.asymmetry();
        if n > 0 && asymmetry > HESSIAN_SYMMETRY_TOL {
            return Err(Error::NotSymmetric { asymmetry });
        }
        let h = h.symmetrized();
        cholesky_factor(&h)?;
        Ok(Self { h, f, g, w })
    }

    /// Problem without inequality rows.
    pub fn unconstrained(h: Matrix, f: Vector) -> Result<Self> {
        let n = f.len();
        Self::new(h, f, Matrix::zeros(0, n), Vector::zeros(0))
    }

    /// Skips the definiteness check; used for the zero-objective feasibility phase.
    pub(crate) fn new_unchecked(h: Matrix, f: Vector, g: Matrix, w: Vector) -> Self {
        debug_assert_eq!(h.rows(), f.len());
        debug_assert_eq!(g.rows(), w.len());
        Self { h, f, g, w }
    }

    pub fn h(&self) -> &Matrix {
        &self.h
    }

    pub fn f(&self) -> &Vector {
        &self.f
    }

    pub fn g(&self) -> &Matrix {
        &self.g
    }

    pub fn w(&self) -> &Vector {
        &self.w
    }

    /// Number of decision variables.
    pub fn dim(&self) -> usize {
        self.f.len()
    }

    /// Number of inequality rows.
    pub fn num_constraints(&self) -> usize {
        self.w.len()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: QpJson = serde_json::from_str(text)
            .map_err(|e| Error::InvalidProblem(format!("malformed QP JSON: {e}")))?;
        raw.into_problem()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidProblem(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        let raw = QpJson {
            h: self.h.to_rows(),
            f: self.f.to_vec(),
            g: self.g.to_rows(),
            w: self.w.to_vec(),
        };
        serde_json::to_string_pretty(&raw).expect("QP serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct QpJson {
    #[serde(rename = "H")]
    h: Vec<Vec<f64>>,
    f: Vec<f64>,
    #[serde(rename = "G", default)]
    g: Vec<Vec<f64>>,
    #[serde(default)]
    w: Vec<f64>,
}

impl QpJson {
    fn into_problem(self) -> Result<QpProblem> {
        let n = self.f.len();
        let h = Matrix::try_from_rows(&self.h)?;
        let g = if self.g.is_empty() {
            Matrix::zeros(0, n)
        } else {
            Matrix::try_from_rows(&self.g)?
        };
        QpProblem::new(h, Vector::new(self.f)?, g, Vector::new(self.w)?)
    }
}

/// Terminal state of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    Infeasible,
    NumericalFailure,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "Optimal",
            SolveStatus::MaxIterations => "MaxIterations",
            SolveStatus::Infeasible => "Infeasible",
            SolveStatus::NumericalFailure => "NumericalFailure",
        }
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub u_star: Vector,
    /// `½ UᵀHU + fᵀU` at `u_star`.
    pub objective: f64,
    pub status: SolveStatus,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub max_violation: f64,
}

/// `½ UᵀHU + fᵀU`.
pub fn objective(qp: &QpProblem, u: &Vector) -> Result<f64> {
    check_dim("objective", qp.dim(), u.len())?;
    let hu = mat_vec(&qp.h, u)?;
    Ok(0.5 * dot(u, &hu) + dot(&qp.f, u))
}

/// `H·U + f`.
pub fn objective_gradient(qp: &QpProblem, u: &Vector) -> Result<Vector> {
    check_dim("objective gradient", qp.dim(), u.len())?;
    mat_vec(&qp.h, u)?.add(&qp.f)
}

/// `G·U − w`; positive entries are violated rows.
pub fn constraint_values(qp: &QpProblem, u: &Vector) -> Result<Vector> {
    check_dim("constraint values", qp.dim(), u.len())?;
    mat_vec(&qp.g, u)?.sub(&qp.w)
}

pub fn max_violation(qp: &QpProblem, u: &Vector) -> Result<f64> {
    Ok(positive_max(&constraint_values(qp, u)?))
}

pub(crate) fn positive_max(g: &[f64]) -> f64 {
    g.iter().fold(0.0_f64, |m, v| m.max(*v))
}

/// Worst of stationarity, primal feasibility, complementarity and dual feasibility.
pub fn kkt_residual(qp: &QpProblem, u: &Vector, lambda: &Vector) -> Result<f64> {
    check_dim("multipliers", qp.num_constraints(), lambda.len())?;
    let stationarity = objective_gradient(qp, u)?
        .add(&mat_t_vec(&qp.g, lambda)?)?
        .norm_inf();
    let g = constraint_values(qp, u)?;
    let primal = positive_max(&g);
    let complementarity = lambda
        .iter()
        .zip(g.iter())
        .fold(0.0_f64, |m, (l, gi)| m.max((l * gi).abs()));
    let dual = lambda.iter().fold(0.0_f64, |m, l| m.max(-l));
    Ok(stationarity.max(primal).max(complementarity).max(dual))
}

/// Least-squares multipliers on the rows with `|g_i| ≤ activity_tol`.
///
/// Minimizes `|H·U + f + G_Aᵀ·λ_A|₂`; inactive rows get zero. A tiny ridge
/// keeps the normal equations solvable when active rows are dependent.
pub fn recover_multipliers(qp: &QpProblem, u: &Vector, activity_tol: f64) -> Result<Vector> {
    let g = constraint_values(qp, u)?;
    let active: Vec<usize> = (0..g.len()).filter(|&i| g[i].abs() <= activity_tol).collect();
    let mut lambda = Vector::zeros(qp.num_constraints());
    if active.is_empty() {
        return Ok(lambda);
    }
    let grad = objective_gradient(qp, u)?;
    let k = active.len();
    let mut gram = Matrix::zeros(k, k);
    let mut rhs = Vec::with_capacity(k);
    let mut max_diag = 0.0_f64;
    for (a, &i) in active.iter().enumerate() {
        for (b, &j) in active.iter().enumerate() {
            let v = dot(qp.g.row(i), qp.g.row(j));
            gram.set(a, b, v);
            if a == b {
                max_diag = max_diag.max(v);
            }
        }
        rhs.push(-dot(qp.g.row(i), &grad));
    }
    let ridge = 1e-12 * max_diag.max(1.0);
    for a in 0..k {
        let v = gram.get(a, a) + ridge;
        gram.set(a, a, v);
    }
    let l = cholesky_factor(&gram)?;
    let sol = cholesky_solve(&l, &Vector::new(rhs)?)?;
    for (a, &i) in active.iter().enumerate() {
        lambda[i] = sol[a];
    }
    Ok(lambda)
}
