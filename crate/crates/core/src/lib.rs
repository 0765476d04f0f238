//! Dense convex QP solving by a robust penalty method, with a condensed
//! linear MPC layer and reference solvers for cross-checking.
//!
//! The solver core is [`rpm::rpm_solve`]: constraints `G·U ≤ w` become a
//! squared-hinge penalty whose gains grow between outer iterations, and
//! each penalized subproblem is minimized by inverse BFGS with Armijo
//! backtracking. [`reference`] holds a primal active-set method and an
//! exhaustive KKT enumeration used as ground truth. [`mpc`] builds the
//! condensed tracking QP for a discrete LTI plant and runs receding-horizon
//! simulations; [`aircraft`] instantiates the Cessna Citation longitudinal
//! case study. [`bench`] contains the batch runs behind the `rpmqp` CLI.

pub mod aircraft;
pub mod bench;
pub mod error;
pub mod linalg;
pub mod mpc;
pub mod numfmt;
pub mod par;
pub mod problems;
pub mod qp;
pub mod reference;
pub mod rpm;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use qp::{QpProblem, QpSolution, SolveStatus};
pub use rpm::{rpm_solve, RpmConfig};
