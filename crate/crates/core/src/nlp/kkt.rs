use serde::{Deserialize, Serialize};

use super::{NlpProblem, OpfSolution};

/// First-order optimality measures recomputed from scratch at a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `‖c(x)‖∞`
    pub feasibility: f64,
    /// `‖∇f − Jᵀλ − z_L + z_U‖∞`
    pub stationarity: f64,
    /// Stationarity divided by `max(1, ‖∇f‖∞)`.
    pub scaled_stationarity: f64,
    /// `max(|z_L·(x − l)|, |z_U·(u − x)|)` over finite bounds.
    pub complementarity: f64,
    /// Most negative bound multiplier (0 when all are non-negative).
    pub dual_sign_violation: f64,
    /// Largest bound violation of `x`.
    pub bound_violation: f64,
}

impl KktReport {
    pub fn satisfied(&self, tol: f64) -> bool {
        self.feasibility <= tol
            && self.scaled_stationarity <= tol
            && self.complementarity <= tol
            && self.dual_sign_violation <= tol
            && self.bound_violation <= tol
    }
}

pub fn kkt_report<P: NlpProblem + ?Sized>(problem: &P, sol: &OpfSolution) -> KktReport {
    let x = &sol.x;
    let (lo, hi) = problem.bounds();
    let g = problem.gradient(x);
    let c = problem.constraints(x);
    let jt = problem.jacobian(x).tr_mul_vec(&sol.multipliers.equality);
    let zl = &sol.multipliers.lower;
    let zu = &sol.multipliers.upper;

    let mut stationarity = 0.0f64;
    let mut complementarity = 0.0f64;
    let mut dual_sign = 0.0f64;
    let mut bound_violation = 0.0f64;
    for j in 0..x.len() {
        stationarity = stationarity.max((g[j] - jt[j] - zl[j] + zu[j]).abs());
        if lo[j].is_finite() {
            complementarity = complementarity.max((zl[j] * (x[j] - lo[j])).abs());
            bound_violation = bound_violation.max(lo[j] - x[j]);
        }
        if hi[j].is_finite() {
            complementarity = complementarity.max((zu[j] * (hi[j] - x[j])).abs());
            bound_violation = bound_violation.max(x[j] - hi[j]);
        }
        dual_sign = dual_sign.max(-zl[j]).max(-zu[j]);
    }
    let gmax = g.iter().fold(1.0f64, |a, b| a.max(b.abs()));
    KktReport {
        feasibility: c.iter().fold(0.0, |a, b| a.max(b.abs())),
        stationarity,
        scaled_stationarity: stationarity / gmax,
        complementarity,
        dual_sign_violation: dual_sign,
        bound_violation,
    }
}
