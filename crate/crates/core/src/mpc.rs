//! Reference-tracking linear MPC on a discrete LTI plant.
//!
//! The horizon problem penalizes the predicted outputs `y_1 … y_N` and the
//! input moves `Δu_k = u_k − u_{k−1}`, with `u_{−1}` the input applied at the
//! previous sample. Decision variable is the stacked input sequence
//! `U = (u_0, …, u_{N−1})`.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{cholesky_factor, mat_vec, Matrix, Vector};
use crate::numfmt::sig9;
use crate::qp::{QpProblem, QpSolution, SolveStatus};
use crate::reference::active_set_solve_cold;
use crate::rpm::{rpm_solve, RpmConfig};

/// `x⁺ = A·x + B·u`, `y = C·x + D·u`, sampled every `ts` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiModel {
    a: Matrix,
    b: Matrix,
    c: Matrix,
    d: Matrix,
    ts: f64,
}

impl LtiModel {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, d: Matrix, ts: f64) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::NotSquare { rows: a.rows(), cols: a.cols() });
        }
        let n = a.rows();
        check_dim("B rows", n, b.rows())?;
        check_dim("C cols", n, c.cols())?;
        check_dim("D rows", c.rows(), d.rows())?;
        check_dim("D cols", b.cols(), d.cols())?;
        if !(ts.is_finite() && ts > 0.0) {
            return Err(Error::InvalidConfig(format!("sampling time must be positive, got {ts}")));
        }
        Ok(Self { a, b, c, d, ts })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    pub fn d(&self) -> &Matrix {
        &self.d
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }

    pub fn states(&self) -> usize {
        self.a.rows()
    }

    pub fn inputs(&self) -> usize {
        self.b.cols()
    }

    pub fn outputs(&self) -> usize {
        self.c.rows()
    }
}

/// Elementwise interval; infinite ends mean "no bound".
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim("bound lengths", lower.len(), upper.len())?;
        for (i, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(Error::InvalidConfig(format!("bound {i} is not an interval: [{lo}, {hi}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(len: usize) -> Self {
        Self { lower: vec![f64::NEG_INFINITY; len], upper: vec![f64::INFINITY; len] }
    }

    /// `[−limit, limit]` in every component.
    pub fn symmetric(limits: &[f64]) -> Result<Self> {
        Self::new(limits.iter().map(|v| -v).collect(), limits.to_vec())
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// Largest distance by which `v` leaves the interval (0 when inside).
    pub fn excess(&self, v: &[f64]) -> f64 {
        v.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&x, (&lo, &hi))| (lo - x).max(x - hi).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Horizon, weights and constraint sets of the tracking controller.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcSpec {
    pub model: LtiModel,
    pub horizon: usize,
    /// Output weight, m×m, PSD.
    pub q: Matrix,
    /// Move weight, l×l, PD.
    pub r: Matrix,
    pub input: Bounds,
    /// Per-step move bounds (slew rate times sampling time).
    pub rate: Bounds,
    pub output: Bounds,
}

impl MpcSpec {
    pub fn new(
        model: LtiModel,
        horizon: usize,
        q: Matrix,
        r: Matrix,
        input: Bounds,
        rate: Bounds,
        output: Bounds,
    ) -> Result<Self> {
        let spec = Self { model, horizon, q, r, input, rate, output };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let (l, m) = (self.model.inputs(), self.model.outputs());
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        check_dim("Q rows", m, self.q.rows())?;
        check_dim("Q cols", m, self.q.cols())?;
        check_dim("R rows", l, self.r.rows())?;
        check_dim("R cols", l, self.r.cols())?;
        check_dim("input bounds", l, self.input.len())?;
        check_dim("rate bounds", l, self.rate.len())?;
        check_dim("output bounds", m, self.output.len())?;
        if self.input.lower.iter().zip(&self.input.upper).any(|(lo, hi)| lo >= hi) {
            return Err(Error::InvalidConfig("input bounds must satisfy u_min < u_max".into()));
        }
        check_psd(&self.q).map_err(|_| Error::InvalidConfig("Q must be symmetric positive semidefinite".into()))?;
        cholesky_factor(&self.r).map_err(|_| Error::InvalidConfig("R must be symmetric positive definite".into()))?;
        Ok(())
    }
}

fn check_psd(q: &Matrix) -> Result<()> {
    let shift = 1e-12 * q.max_abs().max(1.0);
    let n = q.rows();
    cholesky_factor(&q.add(&Matrix::identity(n).scale(shift))?)?;
    Ok(())
}

/// One plant step: returns `(A·x + B·u, C·x + D·u)`.
pub fn step_plant(model: &LtiModel, x: &Vector, u: &Vector) -> Result<(Vector, Vector)> {
    check_dim("state", model.states(), x.len())?;
    check_dim("input", model.inputs(), u.len())?;
    let x_next = mat_vec(&model.a, x)?.add(&mat_vec(&model.b, u)?)?;
    let y = mat_vec(&model.c, x)?.add(&mat_vec(&model.d, u)?)?;
    Ok((x_next, y))
}

/// Stacked prediction `Y = Ψ·x0 + Θ·U` for `y_1 … y_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub psi: Matrix,
    pub theta: Matrix,
}

/// Builds Ψ (mN×n) and Θ (mN×lN).
///
/// Block row `k` is `C·A^k` in Ψ and `C·A^{k−1−j}·B` at column block `j < k`
/// in Θ. A direct feedthrough adds `D` at column block `min(k, N−1)`: the
/// last input is held after the horizon.
pub fn predict_matrices(model: &LtiModel, horizon: usize) -> Result<Prediction> {
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    let (n, l, m) = (model.states(), model.inputs(), model.outputs());
    // c_pow[i] = C·A^i
    let mut c_pow = Vec::with_capacity(horizon + 1);
    c_pow.push(model.c.clone());
    for i in 0..horizon {
        let next = c_pow[i].mul(&model.a)?;
        c_pow.push(next);
    }
    let markov: Vec<Matrix> = c_pow[..horizon].iter().map(|ca| ca.mul(&model.b)).collect::<Result<_>>()?;

    let mut psi = Matrix::zeros(m * horizon, n);
    let mut theta = Matrix::zeros(m * horizon, l * horizon);
    for k in 1..=horizon {
        let row = (k - 1) * m;
        psi.set_block(row, 0, &c_pow[k]);
        for j in 0..k {
            theta.set_block(row, j * l, &markov[k - 1 - j]);
        }
        if model.d.max_abs() > 0.0 {
            let col = k.min(horizon - 1) * l;
            for r in 0..m {
                for c in 0..l {
                    let v = theta.get(row + r, col + c) + model.d.get(r, c);
                    theta.set(row + r, col + c, v);
                }
            }
        }
    }
    Ok(Prediction { psi, theta })
}

#[derive(Debug, Clone, Copy)]
enum RowSource {
    InputUpper(f64),
    InputLower(f64),
    /// Move bound on block `k`, component `i`.
    RateUpper { k: usize, i: usize, bound: f64 },
    RateLower { k: usize, i: usize, bound: f64 },
    /// Stacked output row `r`.
    OutputUpper { r: usize, bound: f64 },
    OutputLower { r: usize, bound: f64 },
}

/// Horizon data that does not change between samples: prediction matrices,
/// Hessian and constraint matrix. Only `f` and `w` depend on the current
/// state, previous input and reference preview.
#[derive(Debug, Clone)]
pub struct Condenser {
    spec: MpcSpec,
    prediction: Prediction,
    h: Matrix,
    /// `2·ΘᵀQ̄`, so that `f = qt·(Ψx0 − Yref) − …`.
    qt: Matrix,
    g: Matrix,
    rows: Vec<RowSource>,
}

impl Condenser {
    pub fn new(spec: &MpcSpec) -> Result<Self> {
        spec.validate()?;
        let (l, m, nh) = (spec.model.inputs(), spec.model.outputs(), spec.horizon);
        let prediction = predict_matrices(&spec.model, nh)?;
        let theta = &prediction.theta;

        let mut qbar = Matrix::zeros(m * nh, m * nh);
        let mut rbar = Matrix::zeros(l * nh, l * nh);
        let mut t = Matrix::zeros(l * nh, l * nh);
        for k in 0..nh {
            qbar.set_block(k * m, k * m, &spec.q);
            rbar.set_block(k * l, k * l, &spec.r);
            t.set_block(k * l, k * l, &Matrix::identity(l));
            if k > 0 {
                t.set_block(k * l, (k - 1) * l, &Matrix::identity(l).scale(-1.0));
            }
        }
        let qt = theta.transpose().mul(&qbar)?.scale(2.0);
        let tr = t.transpose().mul(&rbar)?;
        let h = qt.mul(theta)?.add(&tr.mul(&t)?.scale(2.0))?.symmetrized();

        let mut g_rows: Vec<Vec<f64>> = Vec::new();
        let mut rows = Vec::new();
        let unit = |col: usize, sign: f64| {
            let mut row = vec![0.0; l * nh];
            row[col] = sign;
            row
        };
        for (sign, upper) in [(1.0, true), (-1.0, false)] {
            for k in 0..nh {
                for i in 0..l {
                    let bound = if upper { spec.input.upper[i] } else { spec.input.lower[i] };
                    if bound.is_finite() {
                        g_rows.push(unit(k * l + i, sign));
                        rows.push(if upper { RowSource::InputUpper(bound) } else { RowSource::InputLower(bound) });
                    }
                }
            }
        }
        for (sign, upper) in [(1.0, true), (-1.0, false)] {
            for k in 0..nh {
                for i in 0..l {
                    let bound = if upper { spec.rate.upper[i] } else { spec.rate.lower[i] };
                    if bound.is_finite() {
                        g_rows.push(t.row(k * l + i).iter().map(|v| sign * v).collect());
                        rows.push(if upper {
                            RowSource::RateUpper { k, i, bound }
                        } else {
                            RowSource::RateLower { k, i, bound }
                        });
                    }
                }
            }
        }
        for (sign, upper) in [(1.0, true), (-1.0, false)] {
            for k in 0..nh {
                for i in 0..m {
                    let bound = if upper { spec.output.upper[i] } else { spec.output.lower[i] };
                    if bound.is_finite() {
                        let r = k * m + i;
                        g_rows.push(theta.row(r).iter().map(|v| sign * v).collect());
                        rows.push(if upper {
                            RowSource::OutputUpper { r, bound }
                        } else {
                            RowSource::OutputLower { r, bound }
                        });
                    }
                }
            }
        }
        let g = if g_rows.is_empty() { Matrix::zeros(0, l * nh) } else { Matrix::from_rows(&g_rows) };
        Ok(Self { spec: spec.clone(), prediction, h, qt, g, rows })
    }

    pub fn spec(&self) -> &MpcSpec {
        &self.spec
    }

    pub fn prediction(&self) -> &Prediction {
        &self.prediction
    }

    pub fn num_constraints(&self) -> usize {
        self.rows.len()
    }

    /// Free response minus reference, `Ψ·x0 − Yref`.
    fn free_error(&self, x0: &Vector, y_ref: &[Vector]) -> Result<Vector> {
        let (n, m, nh) = (self.spec.model.states(), self.spec.model.outputs(), self.spec.horizon);
        check_dim("x0", n, x0.len())?;
        check_dim("reference preview", nh, y_ref.len())?;
        for r in y_ref {
            check_dim("reference vector", m, r.len())?;
        }
        let free = mat_vec(&self.prediction.psi, x0)?;
        Ok(free.iter().enumerate().map(|(i, v)| v - y_ref[i / m][i % m]).collect())
    }

    /// Condensed QP for the current sample.
    pub fn problem(&self, x0: &Vector, u_prev: &Vector, y_ref: &[Vector]) -> Result<QpProblem> {
        let l = self.spec.model.inputs();
        check_dim("u_prev", l, u_prev.len())?;
        let e0 = self.free_error(x0, y_ref)?;
        let mut f = mat_vec(&self.qt, &e0)?;
        // −2·TᵀR̄·E·u_prev only touches the first block.
        let ru = mat_vec(&self.spec.r, u_prev)?;
        for i in 0..l {
            f[i] -= 2.0 * ru[i];
        }
        let free = mat_vec(&self.prediction.psi, x0)?;
        let w: Vector = self
            .rows
            .iter()
            .map(|row| match *row {
                RowSource::InputUpper(b) => b,
                RowSource::InputLower(b) => -b,
                RowSource::RateUpper { k, i, bound } => bound + if k == 0 { u_prev[i] } else { 0.0 },
                RowSource::RateLower { k, i, bound } => -bound - if k == 0 { u_prev[i] } else { 0.0 },
                RowSource::OutputUpper { r, bound } => bound - free[r],
                RowSource::OutputLower { r, bound } => -bound + free[r],
            })
            .collect();
        QpProblem::new(self.h.clone(), f, self.g.clone(), w)
    }

    /// Term dropped from the condensed objective: the horizon cost equals
    /// `½UᵀHU + fᵀU + constant`.
    pub fn constant(&self, x0: &Vector, u_prev: &Vector, y_ref: &[Vector]) -> Result<f64> {
        let m = self.spec.model.outputs();
        check_dim("u_prev", self.spec.model.inputs(), u_prev.len())?;
        let e0 = self.free_error(x0, y_ref)?;
        let mut total = 0.0;
        for block in e0.chunks(m) {
            total += quad_form(&self.spec.q, block);
        }
        Ok(total + quad_form(&self.spec.r, u_prev))
    }
}

fn quad_form(w: &Matrix, v: &[f64]) -> f64 {
    (0..v.len()).map(|i| v[i] * crate::linalg::dot(w.row(i), v)).sum()
}

/// One-shot condensing; closed-loop code reuses a [`Condenser`] instead.
pub fn condense(spec: &MpcSpec, x0: &Vector, u_prev: &Vector, y_ref: &[Vector]) -> Result<QpProblem> {
    Condenser::new(spec)?.problem(x0, u_prev, y_ref)
}

/// `(u_1, …, u_{N−1}, u_{N−1})`.
pub fn shift_warm_start(u_prev: &Vector, horizon: usize, inputs: usize) -> Result<Vector> {
    check_dim("warm start", horizon * inputs, u_prev.len())?;
    if horizon <= 1 {
        return Ok(u_prev.clone());
    }
    let mut out = u_prev.as_slice()[inputs..].to_vec();
    out.extend_from_slice(&u_prev.as_slice()[(horizon - 1) * inputs..]);
    Ok(Vector::from_raw(out))
}

/// QP solver driving the closed loop.
#[derive(Debug, Clone, PartialEq)]
pub enum Controller {
    /// Warm-started from the shifted previous solution.
    Rpm(RpmConfig),
    /// Cold-started every sample.
    ActiveSet { max_iters: usize },
}

impl Controller {
    pub fn name(&self) -> &'static str {
        match self {
            Controller::Rpm(_) => "rpm",
            Controller::ActiveSet { .. } => "asm",
        }
    }

    fn solve(&self, qp: &QpProblem, warm: &Vector) -> QpSolution {
        match self {
            Controller::Rpm(cfg) => rpm_solve(qp, cfg, warm),
            Controller::ActiveSet { max_iters } => {
                active_set_solve_cold(qp, *max_iters).unwrap_or_else(|_| QpSolution {
                    u_star: warm.clone(),
                    objective: f64::NAN,
                    status: SolveStatus::Infeasible,
                    outer_iterations: 0,
                    inner_iterations: 0,
                    max_violation: f64::NAN,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub max_violation: f64,
    pub status: SolveStatus,
    /// Set when the solve failed and the previous input was re-applied.
    pub held_input: bool,
    pub solve_seconds: f64,
}

/// Closed-loop time series; every list has one entry per simulated step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub time: Vec<usize>,
    pub x: Vec<Vector>,
    pub u: Vec<Vector>,
    pub y: Vec<Vector>,
    pub y_ref: Vec<Vector>,
    pub stage_cost: Vec<f64>,
    pub cumulative_cost: f64,
    pub solver_stats: Vec<StepStats>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let (n, l, m) = match (self.x.first(), self.u.first(), self.y.first()) {
            (Some(x), Some(u), Some(y)) => (x.len(), u.len(), y.len()),
            _ => (0, 0, 0),
        };
        let mut header = vec!["step".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=l).map(|i| format!("u{i}")));
        header.extend((1..=m).map(|i| format!("y{i}")));
        header.extend((1..=m).map(|i| format!("yref{i}")));
        header.extend(["stage_cost", "outer_iters", "inner_iters", "max_violation", "status"].map(String::from));
        let mut out = header.join(",");
        out.push('\n');
        for k in 0..self.len() {
            let stats = &self.solver_stats[k];
            let mut fields = vec![self.time[k].to_string()];
            for v in [&self.x[k], &self.u[k], &self.y[k], &self.y_ref[k]] {
                fields.extend(v.iter().map(|&e| sig9(e)));
            }
            fields.push(sig9(self.stage_cost[k]));
            fields.push(stats.outer_iterations.to_string());
            fields.push(stats.inner_iterations.to_string());
            fields.push(sig9(stats.max_violation));
            fields.push(stats.status.to_string());
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv())
            .map_err(|e| Error::InvalidConfig(format!("cannot write {}: {e}", path.display())))
    }
}

/// Receding-horizon simulation.
///
/// At every step the horizon QP is condensed at the measured state, solved,
/// and its first input applied. A solve that does not end `Optimal` is
/// recorded in the step's stats and the previous input is held instead. The
/// reference is extended past its end by holding the last sample.
pub fn closed_loop_simulate(
    spec: &MpcSpec,
    controller: &Controller,
    x_init: &Vector,
    u_init_prev: &Vector,
    y_ref: &[Vector],
    t_sim: usize,
) -> Result<Trace> {
    let model = &spec.model;
    let (l, m, nh) = (model.inputs(), model.outputs(), spec.horizon);
    check_dim("x_init", model.states(), x_init.len())?;
    check_dim("u_init_prev", l, u_init_prev.len())?;
    let last = y_ref.last().ok_or_else(|| Error::InvalidConfig("empty reference trajectory".into()))?;
    for r in y_ref {
        check_dim("reference vector", m, r.len())?;
    }
    let reference = |t: usize| y_ref.get(t).unwrap_or(last);

    let condenser = Condenser::new(spec)?;
    let mut trace = Trace {
        time: Vec::with_capacity(t_sim),
        x: Vec::with_capacity(t_sim),
        u: Vec::with_capacity(t_sim),
        y: Vec::with_capacity(t_sim),
        y_ref: Vec::with_capacity(t_sim),
        stage_cost: Vec::with_capacity(t_sim),
        cumulative_cost: 0.0,
        solver_stats: Vec::with_capacity(t_sim),
    };
    let mut x = x_init.clone();
    let mut u_prev = u_init_prev.clone();
    let mut plan = Vector::zeros(nh * l);

    for t in 0..t_sim {
        let preview: Vec<Vector> = (1..=nh).map(|k| reference(t + k).clone()).collect();
        let qp = condenser.problem(&x, &u_prev, &preview)?;
        let warm = if t == 0 { plan.clone() } else { shift_warm_start(&plan, nh, l)? };
        let started = Instant::now();
        let sol = controller.solve(&qp, &warm);
        let solve_seconds = started.elapsed().as_secs_f64();

        let ok = sol.status == SolveStatus::Optimal;
        let u = if ok {
            Vector::from_slice(&sol.u_star.as_slice()[..l])
        } else {
            u_prev.clone()
        };
        plan = if ok { sol.u_star.clone() } else { warm };

        let (x_next, y) = step_plant(model, &x, &u)?;
        let r_t = reference(t).clone();
        let err = y.sub(&r_t)?;
        let du = u.sub(&u_prev)?;
        let cost = quad_form(&spec.q, &err) + quad_form(&spec.r, &du);

        trace.time.push(t);
        trace.x.push(x);
        trace.u.push(u.clone());
        trace.y.push(y);
        trace.y_ref.push(r_t);
        trace.stage_cost.push(cost);
        trace.cumulative_cost += cost;
        trace.solver_stats.push(StepStats {
            outer_iterations: sol.outer_iterations,
            inner_iterations: sol.inner_iterations,
            max_violation: sol.max_violation,
            status: sol.status,
            held_input: !ok,
            solve_seconds,
        });
        x = x_next;
        u_prev = u;
    }
    Ok(trace)
}

/// Relative cumulative suboptimality `|DR − DR_ref| / |DR_ref|`.
pub fn rcso(trace: &Trace, reference: &Trace) -> Result<f64> {
    check_dim("trace length", reference.len(), trace.len())?;
    if reference.cumulative_cost == 0.0 {
        return Err(Error::ZeroReferenceCost);
    }
    Ok((trace.cumulative_cost - reference.cumulative_cost).abs() / reference.cumulative_cost.abs())
}
