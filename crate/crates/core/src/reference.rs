//! Baseline solvers: a primal active-set method and exhaustive KKT enumeration.

use crate::error::{check_dim, Error, Result};
use crate::linalg::{
    cholesky_factor, cholesky_solve, dot, forward_substitute, mat_vec, Matrix, Vector,
};
use crate::qp::{
    constraint_values, objective, objective_gradient, positive_max, QpProblem, QpSolution,
    SolveStatus,
};

/// Violation accepted in the starting point of [`active_set_solve`].
pub const START_FEASIBILITY_TOL: f64 = 1e-9;

/// Largest constraint count [`kkt_enumerate`] accepts.
pub const MAX_ENUMERATED_CONSTRAINTS: usize = 20;

/// `H⁻¹`-weighted products against constraint rows, shared by both solvers.
struct Factored<'a> {
    qp: &'a QpProblem,
    chol: Matrix,
}

impl<'a> Factored<'a> {
    fn new(qp: &'a QpProblem) -> Result<Self> {
        Ok(Self {
            qp,
            chol: cholesky_factor(qp.h())?,
        })
    }

    /// Solves the equality-constrained subproblem
    /// `min ½ pᵀHp + cᵀp  s.t.  G_W·p = r` via the Schur complement
    /// `G_W H⁻¹ G_Wᵀ`. Returns `(p, λ)` with `H·p + c + G_Wᵀλ = 0`.
    fn equality_step(&self, c: &Vector, working: &[usize], r: &[f64]) -> Result<(Vector, Vector)> {
        let n = self.qp.dim();
        let k = working.len();
        let hinv_c = cholesky_solve(&self.chol, c)?;
        if k == 0 {
            return Ok((hinv_c.scale(-1.0), Vector::zeros(0)));
        }
        // Z = L⁻¹ G_Wᵀ, so G_W H⁻¹ G_Wᵀ = ZᵀZ.
        let z: Vec<Vec<f64>> = working
            .iter()
            .map(|&i| forward_substitute(&self.chol, self.qp.g().row(i)))
            .collect::<Result<_>>()?;
        let mut schur = Matrix::zeros(k, k);
        for a in 0..k {
            for b in 0..=a {
                let v = dot(&z[a], &z[b]);
                schur.set(a, b, v);
                schur.set(b, a, v);
            }
        }
        let rhs: Vector = working
            .iter()
            .zip(r)
            .map(|(&i, ri)| -(ri + dot(self.qp.g().row(i), &hinv_c)))
            .collect();
        let lambda = cholesky_solve(&cholesky_factor(&schur)?, &rhs)?;
        let mut rhs_p = c.clone();
        for (a, &i) in working.iter().enumerate() {
            for (v, gij) in rhs_p.iter_mut().zip(self.qp.g().row(i)) {
                *v += lambda[a] * gij;
            }
        }
        let p = cholesky_solve(&self.chol, &rhs_p)?.scale(-1.0);
        debug_assert_eq!(p.len(), n);
        Ok((p, lambda))
    }
}

fn solution(qp: &QpProblem, u: Vector, status: SolveStatus, iterations: usize) -> Result<QpSolution> {
    Ok(QpSolution {
        objective: objective(qp, &u)?,
        max_violation: positive_max(&constraint_values(qp, &u)?),
        u_star: u,
        status,
        outer_iterations: iterations,
        inner_iterations: 0,
    })
}

/// Primal active-set method for strictly convex QPs from a feasible start.
///
/// The working set starts empty. Each iteration solves the equality-constrained
/// subproblem on the working set, then either takes the longest feasible step
/// towards its minimizer (adding the blocking row) or, at a subproblem
/// minimizer, drops the row with the most negative multiplier.
pub fn active_set_solve(qp: &QpProblem, u0: &Vector, max_iters: usize) -> Result<QpSolution> {
    check_dim("initial point", qp.dim(), u0.len())?;
    let violation = positive_max(&constraint_values(qp, u0)?);
    if violation > START_FEASIBILITY_TOL {
        return Err(Error::InfeasibleStart { violation });
    }
    let fac = Factored::new(qp)?;
    let q = qp.num_constraints();
    let mut x = u0.clone();
    let mut working: Vec<usize> = Vec::new();
    let zeros = vec![0.0; q];

    for iter in 0..max_iters {
        let c = objective_gradient(qp, &x)?;
        let (p, lambda) = fac.equality_step(&c, &working, &zeros[..working.len()])?;
        let scale = x.norm_inf().max(1.0);
        if p.norm_inf() > 1e-12 * scale {
            let gx = mat_vec(qp.g(), &x)?;
            let gp = mat_vec(qp.g(), &p)?;
            let mut step = 1.0;
            let mut blocking = None;
            for i in 0..q {
                if working.contains(&i) {
                    continue;
                }
                let row_norm = qp.g().row(i).iter().map(|v| v.abs()).sum::<f64>();
                if gp[i] > 1e-14 * row_norm * p.norm_inf() {
                    let ratio = ((qp.w()[i] - gx[i]) / gp[i]).max(0.0);
                    if ratio < step {
                        step = ratio;
                        blocking = Some(i);
                    }
                }
            }
            x = x.axpy(step, &p)?;
            if let Some(i) = blocking {
                working.push(i);
                continue;
            }
            // A full step lands on the subproblem minimizer, whose multipliers
            // are the `lambda` just computed; re-solving would only return
            // round-off instead of an exact zero step.
        }

        let grad_scale = c.norm_inf().max(1.0);
        let most_negative = lambda
            .iter()
            .enumerate()
            .filter(|(_, l)| **l < -1e-12 * grad_scale)
            .min_by(|a, b| a.1.total_cmp(b.1));
        match most_negative {
            None => return solution(qp, x, SolveStatus::Optimal, iter + 1),
            Some((pos, _)) => {
                working.remove(pos);
            }
        }
    }
    solution(qp, x, SolveStatus::MaxIterations, max_iters)
}

/// Finds a point with `G·U ≤ w` by minimizing the squared violation of
/// tightened rows with a zero objective, then returns the first candidate
/// within [`START_FEASIBILITY_TOL`].
pub fn find_feasible_point(qp: &QpProblem) -> Result<Vector> {
    let n = qp.dim();
    if qp.num_constraints() == 0 {
        return Ok(Vector::zeros(n));
    }
    let scale = qp.w().norm_inf().max(1.0);
    let mut start = Vector::zeros(n);
    if positive_max(&constraint_values(qp, &start)?) <= 0.0 {
        return Ok(start);
    }
    for margin in [1e-3 * scale, 1e-6 * scale, 0.0] {
        let u = crate::rpm::minimize_violation(qp, &start, margin)?;
        if positive_max(&constraint_values(qp, &u)?) <= START_FEASIBILITY_TOL {
            return Ok(u);
        }
        start = u;
    }
    Err(Error::NoFeasiblePoint)
}

/// Feasibility phase followed by [`active_set_solve`].
pub fn active_set_solve_cold(qp: &QpProblem, max_iters: usize) -> Result<QpSolution> {
    let start = find_feasible_point(qp)?;
    active_set_solve(qp, &start, max_iters)
}

/// Multipliers found alongside the solution by [`kkt_enumerate_detailed`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedKkt {
    pub solution: QpSolution,
    pub active_set: Vec<usize>,
    pub multipliers: Vector,
}

/// Ground-truth solution by enumerating active sets of size ≤ min(n, q).
pub fn kkt_enumerate(qp: &QpProblem) -> Result<QpSolution> {
    kkt_enumerate_detailed(qp).map(|e| e.solution)
}

/// Sets are visited by increasing cardinality, lexicographically within a
/// cardinality; a later candidate replaces the incumbent only if its
/// objective is lower by more than 1e-12, which resolves ties.
pub fn kkt_enumerate_detailed(qp: &QpProblem) -> Result<EnumeratedKkt> {
    let q = qp.num_constraints();
    if q > MAX_ENUMERATED_CONSTRAINTS {
        return Err(Error::TooManyConstraints(q));
    }
    let n = qp.dim();
    let fac = Factored::new(qp)?;
    let chol = &fac.chol;

    // Precomputed H⁻¹-products: every candidate then costs O(k³ + q·k).
    let hinv_f = cholesky_solve(chol, qp.f())?;
    let hinv_gt: Vec<Vector> = (0..q)
        .map(|i| cholesky_solve(chol, &Vector::from_raw(qp.g().row(i).to_vec())))
        .collect::<Result<_>>()?;
    let mut gram = Matrix::zeros(q, q);
    for i in 0..q {
        for j in 0..=i {
            let v = dot(qp.g().row(i), &hinv_gt[j]);
            gram.set(i, j, v);
            gram.set(j, i, v);
        }
    }
    let g_hinv_f: Vec<f64> = (0..q).map(|i| dot(qp.g().row(i), &hinv_f)).collect();
    let scale = qp.w().norm_inf().max(1.0);

    let mut best: Option<(f64, Vec<usize>, Vec<f64>, Vector)> = None;
    for size in 0..=n.min(q) {
        for set in Combinations::new(q, size) {
            let Some((x, lambda)) = candidate(&set, &gram, &g_hinv_f, &hinv_f, &hinv_gt, qp)? else {
                continue;
            };
            let lambda_scale = lambda.iter().fold(1.0_f64, |m, l| m.max(l.abs()));
            if lambda.iter().any(|l| *l < -1e-9 * lambda_scale) {
                continue;
            }
            if positive_max(&constraint_values(qp, &x)?) > 1e-9 * scale {
                continue;
            }
            let value = objective(qp, &x)?;
            let better = best.as_ref().map_or(true, |(b, ..)| value < *b - 1e-12);
            if better {
                best = Some((value, set, lambda, x));
            }
        }
    }
    let (_, active_set, lambda, x) = best.ok_or(Error::NoFeasiblePoint)?;
    let mut multipliers = Vector::zeros(q);
    for (i, l) in active_set.iter().zip(&lambda) {
        multipliers[*i] = l.max(0.0);
    }
    Ok(EnumeratedKkt {
        solution: solution(qp, x, SolveStatus::Optimal, 0)?,
        active_set,
        multipliers,
    })
}

/// Stationary point with `set` held active, or `None` when those rows are dependent.
fn candidate(
    set: &[usize],
    gram: &Matrix,
    g_hinv_f: &[f64],
    hinv_f: &Vector,
    hinv_gt: &[Vector],
    qp: &QpProblem,
) -> Result<Option<(Vector, Vec<f64>)>> {
    let k = set.len();
    let mut lambda = Vec::new();
    if k > 0 {
        let mut s = Matrix::zeros(k, k);
        for (a, &i) in set.iter().enumerate() {
            for (b, &j) in set.iter().enumerate() {
                s.set(a, b, gram.get(i, j));
            }
        }
        let Ok(l) = cholesky_factor(&s) else {
            return Ok(None);
        };
        let rhs: Vector = set.iter().map(|&i| -(qp.w()[i] + g_hinv_f[i])).collect();
        lambda = cholesky_solve(&l, &rhs)?.into_vec();
    }
    // x = −H⁻¹(f + G_Aᵀλ)
    let mut x = hinv_f.scale(-1.0);
    for (a, &i) in set.iter().enumerate() {
        x = x.axpy(-lambda[a], &hinv_gt[i])?;
    }
    Ok(Some((x, lambda)))
}

/// Lexicographic k-subsets of `0..n`.
struct Combinations {
    n: usize,
    current: Vec<usize>,
    done: bool,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            current: (0..k).collect(),
            done: k > n,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.current.clone();
        let k = self.current.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.current[i] < self.n - k + i {
                self.current[i] += 1;
                for j in i + 1..k {
                    self.current[j] = self.current[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}
