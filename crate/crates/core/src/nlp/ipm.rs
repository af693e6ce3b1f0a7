use std::collections::VecDeque;

use log::{debug, trace};

use super::linsys::KktMatrix;
use super::{
    LinearSolverKind, Multipliers, NlpProblem, OpfSolution, SolveStatus, SolverError, SolverOptions,
};
use crate::sparse::Triplets;

const KAPPA_EPS: f64 = 10.0;
const KAPPA_SIGMA: f64 = 1e10;
const SCALE_MAX: f64 = 100.0;
/// Objectives with a steeper starting gradient are scaled down to it.
const MAX_GRADIENT: f64 = 100.0;
const ARMIJO: f64 = 1e-4;
/// Below `THETA_MIN·max(1, θ₀)` steps are judged on the barrier objective
/// alone, as long as they stay below that violation.
const THETA_MIN: f64 = 1e-4;
const MIN_STEP: f64 = 1e-12;
const CURVATURE: f64 = 1e-8;
const STALL_WINDOW: usize = 10;
const STALL_DECREASE: f64 = 1e-10;

/// Minimizes `problem` with a primal-dual interior-point method.
///
/// Variables whose bounds coincide are held fixed. A failed line search
/// hands over to a feasibility restoration phase, and a stalled restoration
/// is reported as [`SolveStatus::Infeasible`] with the least-violating
/// iterate as certificate.
pub fn solve<P: NlpProblem + ?Sized>(
    problem: &P,
    options: &SolverOptions,
) -> Result<OpfSolution, SolverError> {
    let x0 = problem.initial_point();
    let g0 = inf_norm(&problem.gradient(&x0));
    if !(g0 > MAX_GRADIENT) {
        return Ipm::new(problem, options)?.run();
    }
    let scale = MAX_GRADIENT / g0;
    debug!("objective scaled by {scale:.3e}");
    let scaled = ScaledObjective {
        inner: problem,
        scale,
    };
    let mut sol = Ipm::new(&scaled, options)?.run()?;
    sol.objective_value /= scale;
    sol.kkt_stationarity /= scale;
    let m = &mut sol.multipliers;
    for v in m
        .equality
        .iter_mut()
        .chain(&mut m.lower)
        .chain(&mut m.upper)
    {
        *v /= scale;
    }
    Ok(sol)
}

/// `scale·f` with the constraints untouched, so that the gradient at the
/// starting point is at most [`MAX_GRADIENT`].
struct ScaledObjective<'a, P: ?Sized> {
    inner: &'a P,
    scale: f64,
}

impl<P: NlpProblem + ?Sized> NlpProblem for ScaledObjective<'_, P> {
    fn num_variables(&self) -> usize {
        self.inner.num_variables()
    }
    fn num_constraints(&self) -> usize {
        self.inner.num_constraints()
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        self.inner.bounds()
    }
    fn initial_point(&self) -> Vec<f64> {
        self.inner.initial_point()
    }
    fn objective(&self, x: &[f64]) -> f64 {
        self.scale * self.inner.objective(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.inner.gradient(x);
        g.iter_mut().for_each(|v| *v *= self.scale);
        g
    }
    fn constraints(&self, x: &[f64]) -> Vec<f64> {
        self.inner.constraints(x)
    }
    fn jacobian(&self, x: &[f64]) -> Triplets {
        self.inner.jacobian(x)
    }
    fn lagrangian_hessian(&self, x: &[f64], lambda: &[f64]) -> Triplets {
        // ∇²(s·f − λᵀc) = s·∇²(f − (λ/s)ᵀc)
        let unscaled: Vec<f64> = lambda.iter().map(|l| l / self.scale).collect();
        let mut h = self.inner.lagrangian_hessian(x, &unscaled);
        h.scale(self.scale);
        h
    }
    fn constraint_name(&self, i: usize) -> String {
        self.inner.constraint_name(i)
    }
    fn variable_name(&self, j: usize) -> String {
        self.inner.variable_name(j)
    }
}

struct Eval {
    f: f64,
    grad: Vec<f64>,
    c: Vec<f64>,
    jac: Triplets,
}

struct Ipm<'a, P: ?Sized> {
    problem: &'a P,
    opt: &'a SolverOptions,
    full: Vec<f64>,
    free: Vec<usize>,
    /// Full index → position among free variables.
    position: Vec<Option<usize>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    m: usize,
    dense: bool,
    x: Vec<f64>,
    lambda: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
    mu: f64,
    penalty: f64,
    theta_min: f64,
    last_delta_w: f64,
    iter: usize,
    mu_history: Vec<f64>,
    best: (f64, Vec<f64>),
}

enum Restoration {
    Recovered,
    Stalled(String),
    Exhausted,
}

impl<'a, P: NlpProblem + ?Sized> Ipm<'a, P> {
    fn new(problem: &'a P, opt: &'a SolverOptions) -> Result<Self, SolverError> {
        let n = problem.num_variables();
        let m = problem.num_constraints();
        let x0 = problem.initial_point();
        let (lo, hi) = problem.bounds();
        if x0.len() != n || lo.len() != n || hi.len() != n {
            return Err(SolverError::Dimension(format!(
                "{n} variables but initial point has {} and bounds {}/{}",
                x0.len(),
                lo.len(),
                hi.len()
            )));
        }
        let mut full = x0.clone();
        let mut free = Vec::new();
        let mut position = vec![None; n];
        for j in 0..n {
            if lo[j] > hi[j] || lo[j].is_nan() || hi[j].is_nan() {
                return Err(SolverError::Bounds {
                    index: j,
                    lower: lo[j],
                    upper: hi[j],
                });
            }
            if lo[j] == hi[j] {
                full[j] = lo[j];
            } else {
                position[j] = Some(free.len());
                free.push(j);
            }
        }
        let lower: Vec<f64> = free.iter().map(|&j| lo[j]).collect();
        let upper: Vec<f64> = free.iter().map(|&j| hi[j]).collect();
        let x: Vec<f64> = free
            .iter()
            .zip(lower.iter().zip(&upper))
            .map(|(&j, (&l, &u))| push_inside(x0[j], l, u, opt.bound_push))
            .collect();
        let dense = match opt.linear_solver {
            LinearSolverKind::Dense => true,
            LinearSolverKind::Sparse => false,
            LinearSolverKind::Auto => free.len() < opt.dense_threshold,
        };
        let mu = opt.mu_init;
        let nf = free.len();
        let mut ipm = Ipm {
            problem,
            opt,
            full,
            free,
            position,
            lower,
            upper,
            m,
            dense,
            x,
            lambda: vec![0.0; m],
            zl: vec![0.0; nf],
            zu: vec![0.0; nf],
            mu,
            penalty: 0.0,
            theta_min: 0.0,
            last_delta_w: 0.0,
            iter: 0,
            mu_history: Vec::new(),
            best: (f64::INFINITY, Vec::new()),
        };
        ipm.reset_bound_duals();
        Ok(ipm)
    }

    fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut full = self.full.clone();
        for (k, &j) in self.free.iter().enumerate() {
            full[j] = x[k];
        }
        full
    }

    fn reduce_cols(&self, t: &Triplets) -> Triplets {
        let mut out = Triplets::new(t.nrows, self.free.len());
        for &(r, c, v) in &t.entries {
            if let Some(k) = self.position[c] {
                out.push(r, k, v);
            }
        }
        out
    }

    fn eval(&self, x: &[f64]) -> Result<Eval, SolverError> {
        let full = self.expand(x);
        let f = self.problem.objective(&full);
        if !f.is_finite() {
            return Err(SolverError::NonFinite("objective".into()));
        }
        let g = self.problem.gradient(&full);
        let c = self.problem.constraints(&full);
        if g.len() != full.len() || c.len() != self.m {
            return Err(SolverError::Dimension(format!(
                "gradient has {} entries, constraints {} (expected {}, {})",
                g.len(),
                c.len(),
                full.len(),
                self.m
            )));
        }
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite(format!(
                "objective gradient entry {j}"
            )));
        }
        if let Some(i) = c.iter().position(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite(self.problem.constraint_name(i)));
        }
        let jac = self.problem.jacobian(&full);
        if jac.nrows != self.m || jac.ncols != full.len() {
            return Err(SolverError::Dimension(format!(
                "jacobian is {}x{}, expected {}x{}",
                jac.nrows,
                jac.ncols,
                self.m,
                full.len()
            )));
        }
        if let Some(&(r, _, _)) = jac.entries.iter().find(|e| !e.2.is_finite()) {
            return Err(SolverError::NonFinite(format!(
                "jacobian of {}",
                self.problem.constraint_name(r)
            )));
        }
        let grad = self.free.iter().map(|&j| g[j]).collect();
        Ok(Eval {
            f,
            grad,
            c,
            jac: self.reduce_cols(&jac),
        })
    }

    fn constraints_at(&self, x: &[f64]) -> Vec<f64> {
        self.problem.constraints(&self.expand(x))
    }

    fn slacks(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let sl = x.iter().zip(&self.lower).map(|(x, l)| x - l).collect();
        let su = x.iter().zip(&self.upper).map(|(x, u)| u - x).collect();
        (sl, su)
    }

    fn barrier_value(&self, x: &[f64], mu: f64) -> f64 {
        let (sl, su) = self.slacks(x);
        let mut b = 0.0;
        for k in 0..x.len() {
            if self.lower[k].is_finite() {
                b -= mu * sl[k].ln();
            }
            if self.upper[k].is_finite() {
                b -= mu * su[k].ln();
            }
        }
        b
    }

    fn reset_bound_duals(&mut self) {
        let (sl, su) = self.slacks(&self.x);
        for k in 0..self.x.len() {
            self.zl[k] = if self.lower[k].is_finite() {
                self.mu / sl[k]
            } else {
                0.0
            };
            self.zu[k] = if self.upper[k].is_finite() {
                self.mu / su[k]
            } else {
                0.0
            };
        }
    }

    fn num_bounds(&self) -> usize {
        self.lower.iter().filter(|l| l.is_finite()).count()
            + self.upper.iter().filter(|u| u.is_finite()).count()
    }

    /// Scaled dual infeasibility, primal infeasibility and complementarity.
    fn errors(&self, ev: &Eval, mu: f64) -> (f64, f64, f64) {
        let jt = ev.jac.tr_mul_vec(&self.lambda);
        let dual = (0..self.x.len())
            .map(|k| (ev.grad[k] - jt[k] - self.zl[k] + self.zu[k]).abs())
            .fold(0.0, f64::max);
        let primal = inf_norm(&ev.c);
        let (sl, su) = self.slacks(&self.x);
        let mut compl = 0.0f64;
        for k in 0..self.x.len() {
            if self.lower[k].is_finite() {
                compl = compl.max((sl[k] * self.zl[k] - mu).abs());
            }
            if self.upper[k].is_finite() {
                compl = compl.max((su[k] * self.zu[k] - mu).abs());
            }
        }
        let nb = self.num_bounds();
        let z1: f64 = self.zl.iter().chain(&self.zu).map(|z| z.abs()).sum();
        let l1: f64 = self.lambda.iter().map(|l| l.abs()).sum();
        let sd = ((l1 + z1) / ((self.m + nb).max(1) as f64)).max(SCALE_MAX) / SCALE_MAX;
        let sc = (z1 / (nb.max(1) as f64)).max(SCALE_MAX) / SCALE_MAX;
        (dual / sd, primal, compl / sc)
    }

    fn hessian(&self, x: &[f64]) -> Triplets {
        let full = self.expand(x);
        let h = self.problem.lagrangian_hessian(&full, &self.lambda);
        let mut out = Triplets::new(self.free.len(), self.free.len());
        for &(r, c, v) in &h.entries {
            if let (Some(i), Some(j)) = (self.position[r], self.position[c]) {
                out.push(i, j, v);
            }
        }
        out
    }

    fn track_best(&mut self, theta: f64) {
        if theta < self.best.0 {
            self.best = (theta, self.x.clone());
        }
    }

    fn run(&mut self) -> Result<OpfSolution, SolverError> {
        let opt = self.opt;
        let mu_min = opt.tol.min(opt.feas_tol) / 10.0;
        let ev = self.eval(&self.x)?;
        self.lambda = self.least_squares_multipliers(&ev);
        self.theta_min = THETA_MIN * inf_norm(&ev.c).max(1.0);

        loop {
            let ev = self.eval(&self.x)?;
            let theta = inf_norm(&ev.c);
            self.track_best(theta);
            let (dual, primal, compl) = self.errors(&ev, 0.0);
            let overall = dual.max(primal).max(compl);
            trace!(
                "iter {:3} f {:.8e} inf_pr {:.2e} inf_du {:.2e} compl {:.2e} mu {:.1e}",
                self.iter,
                ev.f,
                primal,
                dual,
                compl,
                self.mu
            );
            if overall <= opt.tol && theta <= opt.feas_tol {
                return Ok(self.finish(&ev, SolveStatus::Converged, None));
            }
            if self.iter >= opt.max_iter {
                return self.capped();
            }

            loop {
                let (d, p, c) = self.errors(&ev, self.mu);
                if d.max(p).max(c) > KAPPA_EPS * self.mu || self.mu <= mu_min {
                    break;
                }
                let next = (opt.mu_linear_decrease * self.mu)
                    .min(self.mu.powf(opt.mu_superlinear_power))
                    .max(mu_min);
                self.mu = next;
            }
            self.mu_history.push(self.mu);

            match self.step(&ev)? {
                true => {}
                false => {
                    if theta <= opt.feas_tol {
                        // feasible but no acceptable descent step: nudge the
                        // barrier down and retry from the same point
                        if self.mu <= mu_min {
                            return Ok(self.finish(
                                &ev,
                                SolveStatus::IterationLimit,
                                Some("line search failed at a feasible point".into()),
                            ));
                        }
                        self.mu = (self.mu * opt.mu_linear_decrease).max(mu_min);
                        self.iter += 1;
                        continue;
                    }
                    debug!(
                        "line search failed at iter {}, entering restoration",
                        self.iter
                    );
                    match self.restore()? {
                        Restoration::Recovered => {
                            let ev = self.eval(&self.x)?;
                            self.reset_bound_duals();
                            self.lambda = self.least_squares_multipliers(&ev);
                        }
                        Restoration::Stalled(why) => return self.infeasible(why),
                        Restoration::Exhausted => return self.capped(),
                    }
                }
            }
            self.iter += 1;
        }
    }

    /// Computes and applies one Newton step. Returns `false` if the line
    /// search cannot find an acceptable step.
    fn step(&mut self, ev: &Eval) -> Result<bool, SolverError> {
        let n = self.x.len();
        let mu = self.mu;
        let (sl, su) = self.slacks(&self.x);
        let mut sigma = vec![0.0; n];
        let mut grad_phi = ev.grad.clone();
        for k in 0..n {
            if self.lower[k].is_finite() {
                sigma[k] += self.zl[k] / sl[k];
                grad_phi[k] -= mu / sl[k];
            }
            if self.upper[k].is_finite() {
                sigma[k] += self.zu[k] / su[k];
                grad_phi[k] += mu / su[k];
            }
        }
        let hess = self.hessian(&self.x);
        let rhs_x: Vec<f64> = grad_phi.iter().map(|g| -g).collect();
        let rhs_c: Vec<f64> = ev.c.iter().map(|c| -c).collect();
        let Some((dx, lambda_plus, delta_w)) =
            self.regularized_solve(&hess, &sigma, &ev.jac, &rhs_x, &rhs_c)
        else {
            return Ok(false);
        };

        let dzl: Vec<f64> = (0..n)
            .map(|k| {
                if self.lower[k].is_finite() {
                    mu / sl[k] - self.zl[k] - self.zl[k] / sl[k] * dx[k]
                } else {
                    0.0
                }
            })
            .collect();
        let dzu: Vec<f64> = (0..n)
            .map(|k| {
                if self.upper[k].is_finite() {
                    mu / su[k] - self.zu[k] + self.zu[k] / su[k] * dx[k]
                } else {
                    0.0
                }
            })
            .collect();

        let tau = self.opt.tau;
        let mut alpha_max = 1.0f64;
        for k in 0..n {
            if self.lower[k].is_finite() && dx[k] < 0.0 {
                alpha_max = alpha_max.min(-tau * sl[k] / dx[k]);
            }
            if self.upper[k].is_finite() && dx[k] > 0.0 {
                alpha_max = alpha_max.min(tau * su[k] / dx[k]);
            }
        }
        let mut alpha_z = 1.0f64;
        for (z, dz) in self.zl.iter().zip(&dzl).chain(self.zu.iter().zip(&dzu)) {
            if *dz < 0.0 && *z > 0.0 {
                alpha_z = alpha_z.min(-tau * z / dz);
            }
        }

        // ℓ1 penalty large enough for dx to be a descent direction
        let wd = hess.mul_vec(&dx);
        let curvature: f64 = (0..n)
            .map(|k| dx[k] * (wd[k] + (sigma[k] + delta_w) * dx[k]))
            .sum();
        let c1: f64 = ev.c.iter().map(|c| c.abs()).sum();
        let gd: f64 = grad_phi.iter().zip(&dx).map(|(g, d)| g * d).sum();
        let settled = self.theta_min;
        let theta0 = inf_norm(&ev.c);
        // inside the switching band the barrier objective alone decides,
        // which avoids rejecting good steps on second-order violation growth
        let banded = theta0 <= settled && gd < 0.0;
        // otherwise the ℓ1 penalty must make dx a descent direction
        if c1 > 0.0 && !banded {
            let required = (gd + 0.5 * curvature.max(0.0)) / (0.9 * c1);
            if required > self.penalty {
                self.penalty = required + 1e-8;
            }
        }
        let jdx = ev.jac.mul_vec(&dx);
        let dl1: f64 =
            ev.c.iter()
                .zip(&jdx)
                .map(|(c, d)| if *c != 0.0 { c.signum() * d } else { d.abs() })
                .sum();
        let slope = gd + self.penalty * dl1;
        if !(slope < 0.0)
            && !banded
            && dx
                .iter()
                .any(|d| d.abs() > 1e-14 * (1.0 + inf_norm(&self.x)))
        {
            return Ok(false);
        }

        let phi0 = ev.f + self.barrier_value(&self.x, mu);
        let merit0 = phi0 + self.penalty * c1;
        let rounding = 10.0 * f64::EPSILON * merit0.abs().max(1.0);
        let mut alpha = alpha_max;
        let accepted = loop {
            let trial: Vec<f64> = self.x.iter().zip(&dx).map(|(x, d)| x + alpha * d).collect();
            let c = self.constraints_at(&trial);
            let f = self.problem.objective(&self.expand(&trial));
            let phi = f + self.barrier_value(&trial, mu);
            if banded
                && phi.is_finite()
                && inf_norm(&c) <= settled
                && phi <= phi0 + ARMIJO * alpha * gd + rounding
            {
                break Some(trial);
            }
            let merit = phi + self.penalty * c.iter().map(|v| v.abs()).sum::<f64>();
            if merit.is_finite() && merit <= merit0 + ARMIJO * alpha * slope.min(0.0) + rounding {
                break Some(trial);
            }
            alpha *= 0.5;
            if alpha < MIN_STEP {
                break None;
            }
        };
        let Some(trial) = accepted else {
            return Ok(false);
        };
        trace!(
            "step: alpha {alpha:.2e} (max {alpha_max:.2e}) alpha_z {alpha_z:.2e} |dx| {:.2e} ({}) slope {slope:.2e} nu {:.2e}",
            inf_norm(&dx),
            self.problem.variable_name(self.free[argmax_abs(&dx)]),
            self.penalty
        );
        self.x = trial;
        for i in 0..self.m {
            self.lambda[i] += alpha * (lambda_plus[i] - self.lambda[i]);
        }
        let (sl, su) = self.slacks(&self.x);
        for k in 0..n {
            if self.lower[k].is_finite() {
                let z = self.zl[k] + alpha_z * dzl[k];
                self.zl[k] = z
                    .min(KAPPA_SIGMA * mu / sl[k])
                    .max(mu / (KAPPA_SIGMA * sl[k]));
            }
            if self.upper[k].is_finite() {
                let z = self.zu[k] + alpha_z * dzu[k];
                self.zu[k] = z
                    .min(KAPPA_SIGMA * mu / su[k])
                    .max(mu / (KAPPA_SIGMA * su[k]));
            }
        }
        Ok(true)
    }

    /// Solves the Newton system, adding `δw·I` until the step has positive
    /// curvature on the constraint null space and `δc` when the constraint
    /// rows are dependent. Returns `(dx, λ⁺, δw)`.
    fn regularized_solve(
        &mut self,
        hess: &Triplets,
        sigma: &[f64],
        jac: &Triplets,
        rhs_x: &[f64],
        rhs_c: &[f64],
    ) -> Option<(Vec<f64>, Vec<f64>, f64)> {
        let mut delta_w = 0.0f64;
        let mut delta_c = 0.0f64;
        loop {
            let kkt = KktMatrix {
                hessian: hess,
                sigma,
                jacobian: jac,
                delta_w,
                delta_c,
            };
            match kkt.solve(rhs_x, rhs_c, self.dense) {
                None if delta_c == 0.0 && self.m > 0 => {
                    delta_c = 1e-8 * self.mu.powf(0.25);
                    continue;
                }
                Some((dx, nu)) => {
                    let t = self.null_space_part(jac, &dx, delta_c);
                    let tt: f64 = t.iter().map(|v| v * v).sum();
                    let wt = hess.mul_vec(&t);
                    let curv: f64 = (0..t.len())
                        .map(|k| t[k] * (wt[k] + (sigma[k] + delta_w) * t[k]))
                        .sum();
                    if curv >= CURVATURE * tt || tt.sqrt() <= 1e-12 * (1.0 + inf_norm(&dx)) {
                        if delta_w > 0.0 {
                            self.last_delta_w = delta_w;
                        }
                        if delta_w > 0.0 || delta_c > 0.0 {
                            trace!("regularized: delta_w {delta_w:.1e} delta_c {delta_c:.1e}");
                        }
                        let lambda_plus = nu.iter().map(|v| -v).collect();
                        return Some((dx, lambda_plus, delta_w));
                    }
                }
                None => {}
            }
            delta_w = if delta_w == 0.0 {
                if self.last_delta_w == 0.0 {
                    1e-4
                } else {
                    (self.last_delta_w / 3.0).max(1e-20)
                }
            } else if self.last_delta_w == 0.0 {
                delta_w * 100.0
            } else {
                delta_w * 8.0
            };
            if delta_w > 1e40 {
                return None;
            }
        }
    }

    /// Component of `dx` in the null space of `J`.
    fn null_space_part(&self, jac: &Triplets, dx: &[f64], delta_c: f64) -> Vec<f64> {
        if self.m == 0 {
            return dx.to_vec();
        }
        let empty = Triplets::new(dx.len(), dx.len());
        let ones = vec![1.0; dx.len()];
        let proj = KktMatrix {
            hessian: &empty,
            sigma: &ones,
            jacobian: jac,
            delta_w: 0.0,
            delta_c: delta_c.max(1e-12),
        };
        match proj.solve(dx, &vec![0.0; self.m], self.dense) {
            Some((t, _)) => t,
            None => dx.to_vec(),
        }
    }

    fn least_squares_multipliers(&self, ev: &Eval) -> Vec<f64> {
        if self.m == 0 {
            return Vec::new();
        }
        let n = self.x.len();
        let r: Vec<f64> = (0..n)
            .map(|k| ev.grad[k] - self.zl[k] + self.zu[k])
            .collect();
        let empty = Triplets::new(n, n);
        let ones = vec![1.0; n];
        for delta_c in [0.0, 1e-8] {
            let sys = KktMatrix {
                hessian: &empty,
                sigma: &ones,
                jacobian: &ev.jac,
                delta_w: 0.0,
                delta_c,
            };
            if let Some((_, nu)) = sys.solve(&r, &vec![0.0; self.m], self.dense) {
                if inf_norm(&nu) <= 1e8 {
                    return nu;
                }
                break;
            }
        }
        vec![0.0; self.m]
    }

    /// Minimizes `½‖c‖²` inside the bounds with damped Gauss–Newton steps.
    fn restore(&mut self) -> Result<Restoration, SolverError> {
        let entry: f64 = self.constraints_at(&self.x).iter().map(|c| c.abs()).sum();
        let mut rho = 1e-4f64;
        let mut window: VecDeque<f64> = VecDeque::new();
        let theta0 = inf_norm(&self.constraints_at(&self.x));
        let mut mu_r = (1e-4 * theta0.min(1.0).powi(2)).max(1e-14);
        let n = self.x.len();
        loop {
            if self.iter >= self.opt.max_iter {
                return Ok(Restoration::Exhausted);
            }
            let ev = self.eval(&self.x)?;
            let theta = inf_norm(&ev.c);
            self.track_best(theta);
            let l1: f64 = ev.c.iter().map(|c| c.abs()).sum();
            if theta <= self.opt.feas_tol || (l1 <= 0.9 * entry && !window.is_empty()) {
                return Ok(Restoration::Recovered);
            }
            window.push_back(theta);
            if window.len() > STALL_WINDOW + 1 {
                window.pop_front();
            }
            if window.len() == STALL_WINDOW + 1 && window[0] - window[STALL_WINDOW] < STALL_DECREASE
            {
                return Ok(Restoration::Stalled(format!(
                    "restoration stalled: max violation {:.3e} fell by less than {:.0e} over {} iterations",
                    theta, STALL_DECREASE, STALL_WINDOW
                )));
            }

            let (sl, su) = self.slacks(&self.x);
            let mut sigma = vec![0.0; n];
            let mut gb = vec![0.0; n];
            for k in 0..n {
                if self.lower[k].is_finite() {
                    sigma[k] += mu_r / (sl[k] * sl[k]);
                    gb[k] -= mu_r / sl[k];
                }
                if self.upper[k].is_finite() {
                    sigma[k] += mu_r / (su[k] * su[k]);
                    gb[k] += mu_r / su[k];
                }
            }
            let empty = Triplets::new(n, n);
            let sys = KktMatrix {
                hessian: &empty,
                sigma: &sigma,
                jacobian: &ev.jac,
                delta_w: rho,
                delta_c: 1.0,
            };
            let rhs_x: Vec<f64> = gb.iter().map(|g| -g).collect();
            let rhs_c: Vec<f64> = ev.c.iter().map(|c| -c).collect();
            let psi = |ipm: &Self, x: &[f64], c: &[f64]| {
                0.5 * c.iter().map(|v| v * v).sum::<f64>() + ipm.barrier_value(x, mu_r)
            };
            let psi0 = psi(self, &self.x, &ev.c);
            let accepted = sys.solve(&rhs_x, &rhs_c, self.dense).and_then(|(dx, _)| {
                let jtc = ev.jac.tr_mul_vec(&ev.c);
                let slope: f64 = (0..n).map(|k| (jtc[k] + gb[k]) * dx[k]).sum();
                let mut alpha = 1.0f64;
                for k in 0..n {
                    if self.lower[k].is_finite() && dx[k] < 0.0 {
                        alpha = alpha.min(-self.opt.tau * sl[k] / dx[k]);
                    }
                    if self.upper[k].is_finite() && dx[k] > 0.0 {
                        alpha = alpha.min(self.opt.tau * su[k] / dx[k]);
                    }
                }
                while alpha >= MIN_STEP {
                    let trial: Vec<f64> =
                        self.x.iter().zip(&dx).map(|(x, d)| x + alpha * d).collect();
                    let c = self.constraints_at(&trial);
                    let value = psi(self, &trial, &c);
                    if value.is_finite() && value <= psi0 + ARMIJO * alpha * slope.min(0.0) {
                        return Some(trial);
                    }
                    alpha *= 0.5;
                }
                None
            });
            match accepted {
                Some(trial) => {
                    self.x = trial;
                    rho = (rho / 3.0).max(1e-12);
                    mu_r = (mu_r * 0.2).max(1e-14);
                }
                None => {
                    rho *= 10.0;
                    if rho > 1e20 {
                        return Ok(Restoration::Stalled(format!(
                            "restoration cannot reduce max violation {theta:.3e}"
                        )));
                    }
                }
            }
            self.iter += 1;
        }
    }

    fn capped(&mut self) -> Result<OpfSolution, SolverError> {
        let ev = self.eval(&self.x)?;
        let theta = inf_norm(&ev.c);
        if theta > self.opt.infeasible_violation {
            return self.infeasible(format!(
                "iteration limit {} reached with max violation {theta:.3e}",
                self.opt.max_iter
            ));
        }
        Ok(self.finish(
            &ev,
            SolveStatus::IterationLimit,
            Some(format!("iteration limit {} reached", self.opt.max_iter)),
        ))
    }

    fn infeasible(&mut self, why: String) -> Result<OpfSolution, SolverError> {
        debug!("{why}");
        if !self.best.1.is_empty() {
            self.x = self.best.1.clone();
        }
        let ev = self.eval(&self.x)?;
        Ok(self.finish(&ev, SolveStatus::Infeasible, Some(why)))
    }

    fn finish(&self, ev: &Eval, status: SolveStatus, diagnostic: Option<String>) -> OpfSolution {
        let x = self.expand(&self.x);
        let n = x.len();
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for (k, &j) in self.free.iter().enumerate() {
            lower[j] = self.zl[k];
            upper[j] = self.zu[k];
        }
        if self.free.len() < n {
            // fixed variables absorb the remaining gradient
            let g = self.problem.gradient(&x);
            let jt = self.problem.jacobian(&x).tr_mul_vec(&self.lambda);
            for j in 0..n {
                if self.position[j].is_none() {
                    let r = g[j] - jt[j];
                    if r >= 0.0 {
                        lower[j] = r;
                    } else {
                        upper[j] = -r;
                    }
                }
            }
        }
        let (dual, primal, _) = self.errors(ev, 0.0);
        let objective_value = ev.f;
        OpfSolution {
            x,
            multipliers: Multipliers {
                equality: self.lambda.clone(),
                lower,
                upper,
            },
            objective_value,
            max_residual: primal,
            kkt_stationarity: dual,
            status,
            iterations: self.iter,
            mu_history: self.mu_history.clone(),
            diagnostic,
        }
    }
}

fn push_inside(x: f64, l: f64, u: f64, push: f64) -> f64 {
    let mut x = x;
    let width = u - l;
    if l.is_finite() {
        let p = (push * l.abs().max(1.0)).min(if width.is_finite() {
            push * width
        } else {
            f64::INFINITY
        });
        x = x.max(l + p);
    }
    if u.is_finite() {
        let p = (push * u.abs().max(1.0)).min(if width.is_finite() {
            push * width
        } else {
            f64::INFINITY
        });
        x = x.min(u - p);
    }
    x
}

fn argmax_abs(v: &[f64]) -> usize {
    (0..v.len())
        .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()))
        .unwrap_or(0)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}
