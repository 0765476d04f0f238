//! Benchmark and randomly generated problem instances.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::{mat_vec, Matrix, Vector};
use crate::qp::QpProblem;

/// The two-variable `qptest` benchmark in `G·U ≤ w` form.
///
/// Rows, in order: `2x + y ≥ 2`, `−x + 2y ≤ 6`, `x ≥ 0`, `x ≤ 20`, `y ≥ 0`.
/// The source formulation adds a constant 4 to the objective; it is left
/// out here, so the optimum is 4.371875 at (0.7625, 0.475).
pub fn qptest() -> QpProblem {
    QpProblem::new(
        Matrix::from_rows(&[[8.0, 2.0], [2.0, 10.0]]),
        Vector::from_slice(&[1.5, -2.0]),
        Matrix::from_rows(&[
            [-2.0, -1.0],
            [-1.0, 2.0],
            [-1.0, 0.0],
            [1.0, 0.0],
            [0.0, -1.0],
        ]),
        Vector::from_slice(&[-2.0, 6.0, 0.0, 20.0, 0.0]),
    )
    .expect("qptest data is valid")
}

/// Known solution of [`qptest`].
pub const QPTEST_OPTIMUM: [f64; 2] = [0.7625, 0.475];
pub const QPTEST_OBJECTIVE: f64 = 4.371875;

/// Deterministic RNG for instance `index` of a seeded batch.
///
/// Each instance gets its own ChaCha stream, so batches can be generated in
/// any order (or in parallel) and still reproduce.
pub fn instance_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, half_width: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-half_width..=half_width))
        .collect();
    Matrix::new(rows, cols, data).expect("finite samples")
}

fn uniform_vector<R: Rng>(rng: &mut R, len: usize, half_width: f64) -> Vector {
    (0..len)
        .map(|_| rng.gen_range(-half_width..=half_width))
        .collect()
}

/// `AᵀA + shift·I` with `A` uniform in [-1, 1].
pub fn random_spd<R: Rng>(rng: &mut R, n: usize, shift: f64) -> Matrix {
    let a = uniform_matrix(rng, n, n, 1.0);
    let mut m = a.transpose().mul(&a).expect("square");
    for i in 0..n {
        let d = m.get(i, i) + shift;
        m.set(i, i, d);
    }
    m.symmetrized()
}

/// A strictly convex QP with `1 ≤ n ≤ nmax`, `0 ≤ q ≤ qmax` and a strictly
/// feasible interior point `center` (every row has slack in [0.1, 1]).
#[derive(Debug, Clone)]
pub struct RandomQp {
    pub problem: QpProblem,
    pub center: Vector,
}

pub fn random_qp<R: Rng>(rng: &mut R, nmax: usize, qmax: usize) -> RandomQp {
    assert!(nmax >= 1);
    let n = rng.gen_range(1..=nmax);
    let q = rng.gen_range(0..=qmax);
    random_qp_sized(rng, n, q)
}

pub fn random_qp_sized<R: Rng>(rng: &mut R, n: usize, q: usize) -> RandomQp {
    let h = random_spd(rng, n, 0.5);
    let f = uniform_vector(rng, n, 10.0);
    let g = uniform_matrix(rng, q, n, 1.0);
    let center = uniform_vector(rng, n, 1.0);
    let slack: Vec<f64> = (0..q).map(|_| rng.gen_range(0.1..=1.0)).collect();
    let w = mat_vec(&g, &center)
        .expect("shapes agree")
        .iter()
        .zip(&slack)
        .map(|(a, s)| a + s)
        .collect();
    RandomQp {
        problem: QpProblem::new(h, f, g, w).expect("random QP is valid"),
        center,
    }
}

/// Random point with entries uniform in `[-half_width, half_width]`.
pub fn random_point<R: Rng>(rng: &mut R, n: usize, half_width: f64) -> Vector {
    uniform_vector(rng, n, half_width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::max_violation;

    #[test]
    fn random_instances_are_reproducible() {
        let a = random_qp(&mut instance_rng(42, 7), 8, 16);
        let b = random_qp(&mut instance_rng(42, 7), 8, 16);
        assert_eq!(a.problem, b.problem);
        let c = random_qp(&mut instance_rng(42, 8), 8, 16);
        assert_ne!(a.problem, c.problem);
    }

    #[test]
    fn center_is_strictly_feasible() {
        for i in 0..20 {
            let r = random_qp(&mut instance_rng(1, i), 8, 16);
            assert_eq!(max_violation(&r.problem, &r.center).unwrap(), 0.0);
        }
    }
}
