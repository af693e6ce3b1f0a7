//! Primal-dual interior-point solver for
//!
//! ```txt
//!     min f(x)   s.t.   c(x) = 0,   l ≤ x ≤ u
//! ```
//!
//! Multipliers follow the `L = f − λᵀc − z_Lᵀ(x − l) − z_Uᵀ(u − x)` convention,
//! so stationarity reads `∇f − Jᵀλ − z_L + z_U = 0` with `z_L, z_U ≥ 0`.

mod ipm;
mod kkt;
mod linsys;
mod opf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sparse::Triplets;

pub use ipm::solve;
pub use kkt::{kkt_report, KktReport};
pub use opf::{ObjectiveKind, OpfProblem, Proximal};

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("inconsistent bounds on variable {index}: lower {lower} > upper {upper}")]
    Bounds {
        index: usize,
        lower: f64,
        upper: f64,
    },
    #[error("non-finite evaluation in {0}")]
    NonFinite(String),
}

/// Smooth NLP with equality constraints and simple bounds.
pub trait NlpProblem {
    fn num_variables(&self) -> usize;
    fn num_constraints(&self) -> usize;
    /// Lower and upper bounds; infinite entries are unbounded.
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);
    fn initial_point(&self) -> Vec<f64>;
    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn constraints(&self, x: &[f64]) -> Vec<f64>;
    fn jacobian(&self, x: &[f64]) -> Triplets;

    /// Hessian of `f − λᵀc`. Defaults to central differences of the
    /// Lagrangian gradient built from [`NlpProblem::gradient`] and
    /// [`NlpProblem::jacobian`].
    fn lagrangian_hessian(&self, x: &[f64], lambda: &[f64]) -> Triplets {
        fd_hessian(x, |p| {
            let mut g = self.gradient(p);
            let jt = self.jacobian(p).tr_mul_vec(lambda);
            for (gi, ji) in g.iter_mut().zip(jt) {
                *gi -= ji;
            }
            g
        })
    }

    fn constraint_name(&self, i: usize) -> String {
        format!("constraint {i}")
    }

    fn variable_name(&self, j: usize) -> String {
        format!("variable {j}")
    }
}

/// Symmetrized central-difference Jacobian of a gradient map.
pub fn fd_hessian(x: &[f64], grad: impl Fn(&[f64]) -> Vec<f64>) -> Triplets {
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut probe = x.to_vec();
    for j in 0..n {
        let h = 1e-6 * x[j].abs().max(1.0);
        probe[j] = x[j] + h;
        let plus = grad(&probe);
        probe[j] = x[j] - h;
        let minus = grad(&probe);
        probe[j] = x[j];
        cols.push(
            plus.iter()
                .zip(&minus)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect::<Vec<_>>(),
        );
    }
    let mut h = Triplets::new(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = 0.5 * (cols[j][i] + cols[i][j]);
            if v != 0.0 {
                h.push(i, j, v);
            }
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinearSolverKind {
    /// Dense below [`SolverOptions::dense_threshold`] variables, sparse above.
    Auto,
    Dense,
    Sparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Overall scaled KKT tolerance.
    pub tol: f64,
    /// Constraint violation tolerance for a converged verdict.
    pub feas_tol: f64,
    pub max_iter: usize,
    pub mu_init: f64,
    /// Barrier update `μ ← min(κ·μ, μ^θ)`.
    pub mu_linear_decrease: f64,
    pub mu_superlinear_power: f64,
    /// Fraction-to-boundary parameter.
    pub tau: f64,
    /// Relative push of the starting point into the bound interior.
    pub bound_push: f64,
    pub linear_solver: LinearSolverKind,
    pub dense_threshold: usize,
    /// Violation above which an iteration-capped run is declared infeasible.
    pub infeasible_violation: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-9,
            feas_tol: 1e-9,
            max_iter: 300,
            mu_init: 0.1,
            mu_linear_decrease: 0.2,
            mu_superlinear_power: 1.5,
            tau: 0.995,
            bound_push: 1e-2,
            linear_solver: LinearSolverKind::Auto,
            dense_threshold: 500,
            infeasible_violation: 1e-4,
        }
    }
}

impl SolverOptions {
    /// Settings for starting from a previous solution.
    pub fn warm(&self) -> Self {
        SolverOptions {
            mu_init: 1e-9,
            bound_push: 1e-6,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub equality: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpfSolution {
    pub x: Vec<f64>,
    pub multipliers: Multipliers,
    pub objective_value: f64,
    pub max_residual: f64,
    pub kkt_stationarity: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Barrier parameter at each iteration.
    #[serde(skip)]
    pub mu_history: Vec<f64>,
    /// Populated for non-converged runs.
    pub diagnostic: Option<String>,
}

impl OpfSolution {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}
