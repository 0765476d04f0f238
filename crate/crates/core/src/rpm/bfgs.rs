//! Inverse-BFGS minimization of the penalized objective with a fixed gain vector.

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, mat_vec, norm_inf, Matrix, Vector};
use crate::qp::{positive_max, QpProblem};

use super::RpmConfig;

/// Upper bound on step shrinks tried by the line search.
pub const MAX_LINE_SEARCH_TRIALS: usize = 60;

/// BFGS iterate together with its inverse-Hessian approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct BfgsState {
    pub u: Vector,
    pub hinv: Matrix,
    pub grad: Vector,
    pub k: usize,
}

/// `H̃ · (−∇F)`.
pub fn bfgs_direction(state: &BfgsState) -> Result<Vector> {
    let n = state.u.len();
    check_dim("inverse Hessian rows", n, state.hinv.rows())?;
    check_dim("inverse Hessian cols", n, state.hinv.cols())?;
    check_dim("gradient", n, state.grad.len())?;
    Ok(mat_vec(&state.hinv, &state.grad)?.scale(-1.0))
}

/// Inverse-BFGS update `(I − ρsyᵀ) H̃ (I − ρysᵀ) + ρssᵀ` with `ρ = 1/(yᵀs)`.
///
/// Skipped (returns `hinv` unchanged) when `yᵀs ≤ curvature_eps·|y|·|s|`,
/// which is what keeps `H̃` positive definite.
pub fn bfgs_update(hinv: &Matrix, s: &Vector, y: &Vector, curvature_eps: f64) -> Result<Matrix> {
    check_dim("bfgs step", hinv.rows(), s.len())?;
    check_dim("bfgs gradient change", s.len(), y.len())?;
    let mut out = hinv.clone();
    update_in_place(&mut out, s, y, curvature_eps, &mut Vec::new())?;
    Ok(out)
}

/// [`bfgs_update`] without the copy, using `hy` as scratch; returns whether
/// the update was applied.
fn update_in_place(hinv: &mut Matrix, s: &[f64], y: &[f64], curvature_eps: f64, hy: &mut Vec<f64>) -> Result<bool> {
    let n = s.len();
    let ys = dot(y, s);
    if !(ys > curvature_eps * dot(y, y).sqrt() * dot(s, s).sqrt()) {
        return Ok(false);
    }
    let rho = 1.0 / ys;
    hy.clear();
    hy.extend((0..n).map(|i| dot(hinv.row(i), y)));
    let yhy = dot(y, hy);
    let ss_coeff = rho * rho * yhy + rho;
    let data = hinv.data_mut();
    for i in 0..n {
        for j in 0..=i {
            let v = data[i * n + j] - rho * (s[i] * hy[j] + hy[i] * s[j]) + ss_coeff * s[i] * s[j];
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("BFGS update overflowed".into()));
    }
    Ok(true)
}

/// Quantities along a search ray `U + t·p` that make each line-search trial O(q).
///
/// The change `F(U + t·p) − F(U)` is evaluated directly instead of as a
/// difference of two large values; near a high-gain minimizer the two
/// values agree to most of their digits.
struct Ray {
    /// `∇J(U)·p`
    linear: f64,
    /// `pᵀHp`
    curvature: f64,
    /// `(K_i, g_i(U), (G·p)_i)` for the rows that can carry penalty for
    /// some `t > 0`; the others contribute exactly zero along the ray.
    rows: Vec<(f64, f64, f64)>,
    hp: Vec<f64>,
    gp: Vec<f64>,
}

impl Ray {
    fn with_capacity(n: usize, q: usize) -> Self {
        Self {
            linear: 0.0,
            curvature: 0.0,
            rows: Vec::with_capacity(q),
            hp: Vec::with_capacity(n),
            gp: Vec::with_capacity(q),
        }
    }

    /// Points the ray along `p` from the iterate cached in `at`, reusing buffers.
    fn aim(&mut self, qp: &QpProblem, gains: &[f64], at: &Products, p: &[f64]) {
        self.hp.clear();
        self.hp.extend((0..p.len()).map(|i| dot(qp.h().row(i), p)));
        self.gp.clear();
        self.gp.extend((0..gains.len()).map(|i| dot(qp.g().row(i), p)));
        self.linear = dot(&at.hu, p) + dot(qp.f(), p);
        self.curvature = dot(p, &self.hp);
        self.rows.clear();
        self.rows.extend(
            gains
                .iter()
                .zip(&at.g)
                .zip(&self.gp)
                .filter(|((k, g0), d)| **k != 0.0 && (**g0 > 0.0 || **d > 0.0))
                .map(|((k, g0), d)| (*k, *g0, *d)),
        );
    }

    fn change(&self, t: f64) -> f64 {
        let mut delta = t * self.linear + 0.5 * t * t * self.curvature;
        for &(k, g0, d) in &self.rows {
            let g1 = g0 + t * d;
            let diff = if g0 > 0.0 && g1 > 0.0 {
                t * d * (2.0 * g0 + t * d)
            } else {
                g1.max(0.0).powi(2) - g0.max(0.0).powi(2)
            };
            delta += k * diff;
        }
        delta
    }
}

enum LineSearch {
    Accepted { step: f64 },
    NotDescent { slope: f64 },
    Exhausted,
}

fn constraint_rows(qp: &QpProblem, u: &[f64]) -> Vec<f64> {
    (0..qp.num_constraints()).map(|i| dot(qp.g().row(i), u) - qp.w()[i]).collect()
}

/// `H·U` and `G·U − w` at the current iterate.
struct Products {
    hu: Vec<f64>,
    g: Vec<f64>,
}

impl Products {
    fn at(qp: &QpProblem, u: &[f64]) -> Self {
        let g = constraint_rows(qp, u);
        Self::with_constraints(qp, u, g)
    }

    fn with_constraints(qp: &QpProblem, u: &[f64], g: Vec<f64>) -> Self {
        let hu = (0..u.len()).map(|i| dot(qp.h().row(i), u)).collect();
        Self { hu, g }
    }

    /// Moves the cached products to `U + t·p` given `H·p` and `G·p`.
    fn advance(&mut self, t: f64, hp: &[f64], gp: &[f64]) {
        for (v, d) in self.hu.iter_mut().zip(hp) {
            *v += t * d;
        }
        for (v, d) in self.g.iter_mut().zip(gp) {
            *v += t * d;
        }
    }

    /// `J(U) + Σ K_i max(0, g_i)²`.
    fn value(&self, qp: &QpProblem, gains: &[f64], u: &[f64]) -> f64 {
        let penalty: f64 = self.g.iter().zip(gains).map(|(g, k)| k * g.max(0.0).powi(2)).sum();
        0.5 * dot(u, &self.hu) + dot(qp.f(), u) + penalty
    }

    fn gradient_into(&self, qp: &QpProblem, gains: &[f64], grad: &mut Vec<f64>) {
        grad.clear();
        grad.extend(self.hu.iter().zip(qp.f().iter()).map(|(a, b)| a + b));
        for (i, (g, k)) in self.g.iter().zip(gains).enumerate() {
            if *g > 0.0 && *k != 0.0 {
                let weight = 2.0 * k * g;
                for (v, gij) in grad.iter_mut().zip(qp.g().row(i)) {
                    *v += weight * gij;
                }
            }
        }
    }

    fn violation(&self) -> f64 {
        positive_max(&self.g)
    }
}

fn line_search(
    qp: &QpProblem,
    gains: &[f64],
    at: &Products,
    p: &[f64],
    grad: &[f64],
    cfg: &RpmConfig,
    ray: &mut Ray,
) -> LineSearch {
    let slope = dot(grad, p);
    if !(slope < 0.0) {
        return LineSearch::NotDescent { slope };
    }
    ray.aim(qp, gains, at, p);
    let mut t = 1.0;
    for _ in 0..=MAX_LINE_SEARCH_TRIALS {
        if ray.change(t) <= cfg.ls_c * t * slope {
            return LineSearch::Accepted { step: t };
        }
        t *= cfg.ls_shrink;
    }
    LineSearch::Exhausted
}

/// Backtracking Armijo search: largest `t ∈ {1, ρ, ρ², …}` with
/// `F(U + t·p) ≤ F(U) + c·t·∇Fᵀp`.
pub fn backtracking_search(
    qp: &QpProblem,
    gains: &Vector,
    u: &Vector,
    p: &Vector,
    grad: &Vector,
    cfg: &RpmConfig,
) -> Result<f64> {
    check_dim("gains", qp.num_constraints(), gains.len())?;
    check_dim("direction", qp.dim(), p.len())?;
    check_dim("gradient", qp.dim(), grad.len())?;
    check_dim("initial point", qp.dim(), u.len())?;
    let at = Products::at(qp, u);
    let mut ray = Ray::with_capacity(qp.dim(), qp.num_constraints());
    match line_search(qp, gains, &at, p, grad, cfg, &mut ray) {
        LineSearch::Accepted { step } => Ok(step),
        LineSearch::NotDescent { slope } => Err(Error::NotDescent { slope }),
        LineSearch::Exhausted => Err(Error::NumericalFailure(format!(
            "no sufficient decrease after {MAX_LINE_SEARCH_TRIALS} step reductions"
        ))),
    }
}

/// Why [`bfgs_solve`] returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BfgsStop {
    /// Relative step fell below the convergence tolerance.
    SmallStep,
    /// Gradient vanished, or was negligible against its scale at the start.
    Stationary,
    /// Line search could not make progress at a rounding-level gradient.
    Stalled,
    /// Zero-gain solve from a feasible start stepped outside the feasible region.
    LeftFeasibleRegion,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsOutcome {
    pub u: Vector,
    /// `G·U − w` at `u`, recomputed exactly.
    pub constraints: Vector,
    /// Penalized objective at `u`.
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: BfgsStop,
    /// Penalized objective at the start and after every accepted step.
    pub history: Vec<f64>,
}

/// Minimizes `J + Kᵀ·max(0, g)²` for fixed gains `K`, starting from `H̃ = I`.
pub fn bfgs_solve(qp: &QpProblem, gains: &Vector, u0: &Vector, cfg: &RpmConfig) -> Result<BfgsOutcome> {
    cfg.validate()?;
    check_dim("gains", qp.num_constraints(), gains.len())?;
    check_dim("initial point", qp.dim(), u0.len())?;
    let init = initial_inverse_hessian(qp, cfg)?;
    minimize(qp, gains, u0, None, cfg, &init)
}

pub(crate) fn initial_inverse_hessian(qp: &QpProblem, cfg: &RpmConfig) -> Result<Matrix> {
    match cfg.hessian_init {
        super::HessianInit::Identity => Ok(Matrix::identity(qp.dim())),
        super::HessianInit::ObjectiveInverse => {
            let l = crate::linalg::cholesky_factor(qp.h())?;
            crate::linalg::cholesky_inverse(&l)
        }
    }
}

/// Magnitude of the terms that make up `∇F`, for relative gradient tests.
/// The cached products are accurate enough for a scale factor.
fn gradient_scale(qp: &QpProblem, gains: &[f64], at: &Products) -> f64 {
    let penalty = at
        .g
        .iter()
        .zip(gains)
        .enumerate()
        .filter(|(_, (gi, k))| **gi > 0.0 && **k != 0.0)
        .fold(0.0_f64, |m, (i, (gi, k))| m.max(2.0 * k * gi * norm_inf(qp.g().row(i))));
    1.0 + norm_inf(&at.hu) + qp.f().norm_inf() + penalty
}

/// Iterations between exact recomputations of the cached `H·U`, `G·U − w`.
const REFRESH_INTERVAL: usize = 32;

/// `init` is the matrix that `cfg.hessian_init` describes, built once by the caller.
pub(crate) fn minimize(
    qp: &QpProblem,
    gains: &Vector,
    u0: &Vector,
    constraints0: Option<&Vector>,
    cfg: &RpmConfig,
    init: &Matrix,
) -> Result<BfgsOutcome> {
    check_dim("gains", qp.num_constraints(), gains.len())?;
    check_dim("initial point", qp.dim(), u0.len())?;
    let mut at = match constraints0 {
        Some(g) => {
            check_dim("initial constraints", qp.num_constraints(), g.len())?;
            Products::with_constraints(qp, u0, g.as_slice().to_vec())
        }
        None => Products::at(qp, u0),
    };
    let zero_gain = qp.num_constraints() > 0 && gains.iter().all(|k| *k == 0.0);
    let watch_feasibility = zero_gain && at.violation() <= cfg.slack_tol;

    // Per-iteration buffers; `p` holds the direction and then the step.
    let n = qp.dim();
    let mut u = u0.as_slice().to_vec();
    let mut hinv = init.clone();
    let mut grad = Vec::with_capacity(n);
    at.gradient_into(qp, gains, &mut grad);
    let mut grad_next = Vec::with_capacity(n);
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut hy = Vec::with_capacity(n);
    let mut ray = Ray::with_capacity(n, qp.num_constraints());

    let mut value = at.value(qp, gains, &u);
    let mut history = vec![value];
    let mut stop = BfgsStop::MaxIterations;
    let mut k = 0;
    // Secant pairs folded into `hinv` since the last (re)initialization.
    let mut curvature_pairs = 0usize;
    let identity_init = cfg.hessian_init == super::HessianInit::Identity;

    // A warm start that is already converged takes no step at all.
    if norm_inf(&grad) <= cfg.conv_tol * gradient_scale(qp, gains, &at) {
        stop = BfgsStop::Stationary;
    }
    while stop == BfgsStop::MaxIterations && k < cfg.max_inner {
        if grad.iter().all(|g| *g == 0.0) {
            stop = BfgsStop::Stationary;
            break;
        }
        for (i, pi) in p.iter_mut().enumerate() {
            *pi = -dot(hinv.row(i), &grad);
        }
        let mut reset = false;
        let accepted = loop {
            match line_search(qp, gains, &at, &p, &grad, cfg, &mut ray) {
                LineSearch::Accepted { step } => break Some(step),
                LineSearch::NotDescent { .. } | LineSearch::Exhausted if !reset => {
                    // Curvature information went stale; restart from steepest descent.
                    reset = true;
                    curvature_pairs = 0;
                    hinv = Matrix::identity(n);
                    for (pi, gi) in p.iter_mut().zip(&grad) {
                        *pi = -gi;
                    }
                }
                _ => break None,
            }
        };
        let Some(step) = accepted else {
            if norm_inf(&grad) <= 1e-9 * gradient_scale(qp, gains, &at) {
                stop = BfgsStop::Stalled;
                break;
            }
            return Err(Error::NumericalFailure(format!(
                "line search failed at gradient norm {:e}",
                norm_inf(&grad)
            )));
        };

        for pi in p.iter_mut() {
            *pi *= step;
        }
        let relative_step = norm_inf(&p) / norm_inf(&u).max(1.0);
        for (ui, si) in u.iter_mut().zip(&p) {
            *ui += si;
        }
        k += 1;
        if k % REFRESH_INTERVAL == 0 {
            at = Products::at(qp, &u);
        } else {
            at.advance(step, &ray.hp, &ray.gp);
        }
        at.gradient_into(qp, gains, &mut grad_next);
        value = at.value(qp, gains, &u);
        history.push(value);

        if watch_feasibility && at.violation() > cfg.slack_tol {
            stop = BfgsStop::LeftFeasibleRegion;
            break;
        }
        // A short step only counts as convergence when the gradient is small
        // too: backtracked steps on a badly scaled model are short because
        // of the largest curvature, not because the iterate has converged.
        let steepest = curvature_pairs == 0 && (identity_init || reset);
        if relative_step < cfg.conv_tol
            && !steepest
            && (zero_gain || norm_inf(&grad_next) <= cfg.conv_tol * gradient_scale(qp, gains, &at))
        {
            stop = BfgsStop::SmallStep;
            break;
        }
        for (yi, (a, b)) in y.iter_mut().zip(grad_next.iter().zip(&grad)) {
            *yi = a - b;
        }
        if update_in_place(&mut hinv, &p, &y, cfg.curvature_eps, &mut hy)? {
            curvature_pairs += 1;
        }
        std::mem::swap(&mut grad, &mut grad_next);
    }

    let constraints = if k == 0 { at.g } else { constraint_rows(qp, &u) };
    Ok(BfgsOutcome {
        u: Vector::from_raw(u),
        constraints: Vector::from_raw(constraints),
        value,
        iterations: k,
        converged: matches!(
            stop,
            BfgsStop::SmallStep | BfgsStop::Stationary | BfgsStop::Stalled
        ),
        stop,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cholesky_factor, cholesky_inverse, cholesky_solve};
    use crate::problems::{qptest, random_spd, QPTEST_OPTIMUM};
    use rand::SeedableRng;

    fn scalar_square() -> QpProblem {
        QpProblem::unconstrained(Matrix::diagonal(&[2.0]), Vector::zeros(1)).unwrap()
    }

    #[test]
    fn direction_examples() {
        let state = BfgsState {
            u: Vector::zeros(2),
            hinv: Matrix::identity(2),
            grad: Vector::from_slice(&[1.0, -2.0]),
            k: 0,
        };
        assert_eq!(bfgs_direction(&state).unwrap().as_slice(), &[-1.0, 2.0]);
        let state = BfgsState {
            grad: Vector::zeros(2),
            ..state
        };
        assert!(bfgs_direction(&state).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn exact_inverse_gives_newton_step() {
        let h = Matrix::from_rows(&[[4.0, 1.0], [1.0, 3.0]]);
        let qp = QpProblem::unconstrained(h.clone(), Vector::from_slice(&[1.0, -1.0])).unwrap();
        let hinv = cholesky_inverse(&cholesky_factor(&h).unwrap()).unwrap();
        let u = Vector::from_slice(&[5.0, -7.0]);
        let grad = crate::qp::objective_gradient(&qp, &u).unwrap();
        let state = BfgsState { u: u.clone(), hinv, grad: grad.clone(), k: 0 };
        let p = bfgs_direction(&state).unwrap();
        let cfg = RpmConfig::default();
        let t = backtracking_search(&qp, &Vector::zeros(0), &u, &p, &grad, &cfg).unwrap();
        assert_eq!(t, 1.0);
        let star = cholesky_solve(&cholesky_factor(&h).unwrap(), &qp.f().scale(-1.0)).unwrap();
        let reached = u.add(&p).unwrap();
        assert!(reached.sub(&star).unwrap().norm_inf() < 1e-12);
    }

    #[test]
    fn armijo_shrinks_once_on_scalar_square() {
        let qp = scalar_square();
        let cfg = RpmConfig::default();
        let t = backtracking_search(
            &qp,
            &Vector::zeros(0),
            &Vector::from_slice(&[1.0]),
            &Vector::from_slice(&[-2.0]),
            &Vector::from_slice(&[2.0]),
            &cfg,
        )
        .unwrap();
        assert_eq!(t, 0.5);
    }

    #[test]
    fn line_search_rejects_non_descent() {
        let qp = scalar_square();
        let err = backtracking_search(
            &qp,
            &Vector::zeros(0),
            &Vector::from_slice(&[0.0]),
            &Vector::from_slice(&[0.0]),
            &Vector::from_slice(&[0.0]),
            &RpmConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotDescent { .. }));
    }

    #[test]
    fn update_examples() {
        let h = Matrix::identity(2);
        let same = bfgs_update(&h, &Vector::zeros(2), &Vector::zeros(2), 1e-12).unwrap();
        assert_eq!(same, h);
        let s = Vector::from_slice(&[1.0, 0.0]);
        let fixed = bfgs_update(&h, &s, &s, 1e-12).unwrap();
        assert_eq!(fixed, h);
        // Negative curvature is skipped.
        let y = Vector::from_slice(&[-1.0, 0.0]);
        assert_eq!(bfgs_update(&h, &s, &y, 1e-12).unwrap(), h);
    }

    #[test]
    fn conjugate_updates_recover_the_inverse() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 5;
        let h = random_spd(&mut rng, n, n as f64);
        // H-conjugate steps, as exact line searches on a quadratic produce.
        let mut steps: Vec<Vector> = Vec::new();
        for i in 0..n {
            let mut s = Vector::zeros(n);
            s[i] = 1.0;
            for prev in &steps {
                let hp = mat_vec(&h, prev).unwrap();
                let coeff = dot(&s, &hp) / dot(prev, &hp);
                s = s.axpy(-coeff, prev).unwrap();
            }
            steps.push(s);
        }
        let mut hinv = Matrix::identity(n);
        for s in &steps {
            let y = mat_vec(&h, s).unwrap();
            hinv = bfgs_update(&hinv, s, &y, 1e-12).unwrap();
        }
        let prod = hinv.mul(&h).unwrap();
        for i in 0..n {
            for j in 0..n {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((prod.get(i, j) - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn solve_unconstrained_minimum() {
        let qp = QpProblem::unconstrained(Matrix::diagonal(&[2.0, 2.0]), Vector::from_slice(&[-2.0, -4.0]))
            .unwrap();
        let out = bfgs_solve(&qp, &Vector::zeros(0), &Vector::zeros(2), &RpmConfig::default()).unwrap();
        assert!(out.converged);
        assert!((out.u[0] - 1.0).abs() < 1e-6 && (out.u[1] - 2.0).abs() < 1e-6);

        let again = bfgs_solve(&qp, &Vector::zeros(0), &out.u, &RpmConfig::default()).unwrap();
        assert!(again.iterations <= 1);
        assert!(again.u.sub(&out.u).unwrap().norm_inf() < 1e-9);
    }

    #[test]
    fn start_at_minimizer_takes_no_step() {
        let qp = QpProblem::unconstrained(Matrix::diagonal(&[2.0, 2.0]), Vector::from_slice(&[-2.0, -4.0]))
            .unwrap();
        let star = Vector::from_slice(&[1.0, 2.0]);
        let out = bfgs_solve(&qp, &Vector::zeros(0), &star, &RpmConfig::default()).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.stop, BfgsStop::Stationary);
        assert_eq!(out.u, star);
    }

    #[test]
    fn large_gain_approaches_qptest_optimum() {
        let qp = qptest();
        let out = bfgs_solve(&qp, &Vector::filled(5, 1e6), &Vector::zeros(2), &RpmConfig::default()).unwrap();
        assert!((out.u[0] - QPTEST_OPTIMUM[0]).abs() < 1e-3, "{:?}", out.u);
        assert!((out.u[1] - QPTEST_OPTIMUM[1]).abs() < 1e-3, "{:?}", out.u);
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }
}
