use mtdc_opf::nlp::{kkt_report, solve, LinearSolverKind, NlpProblem, SolveStatus, SolverOptions};
use mtdc_opf::sparse::Triplets;

/// Generic test problem from closures.
struct Toy {
    lo: Vec<f64>,
    hi: Vec<f64>,
    x0: Vec<f64>,
    f: fn(&[f64]) -> f64,
    g: fn(&[f64]) -> Vec<f64>,
    c: fn(&[f64]) -> Vec<f64>,
    j: fn(&[f64]) -> Vec<Vec<f64>>,
}

impl NlpProblem for Toy {
    fn num_variables(&self) -> usize {
        self.x0.len()
    }
    fn num_constraints(&self) -> usize {
        (self.c)(&self.x0).len()
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.lo.clone(), self.hi.clone())
    }
    fn initial_point(&self) -> Vec<f64> {
        self.x0.clone()
    }
    fn objective(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.g)(x)
    }
    fn constraints(&self, x: &[f64]) -> Vec<f64> {
        (self.c)(x)
    }
    fn jacobian(&self, x: &[f64]) -> Triplets {
        let rows = (self.j)(x);
        let mut t = Triplets::new(rows.len(), x.len());
        for (i, r) in rows.iter().enumerate() {
            for (k, v) in r.iter().enumerate() {
                if *v != 0.0 {
                    t.push(i, k, *v);
                }
            }
        }
        t
    }
}

const INF: f64 = f64::INFINITY;

fn no_constraints(_: &[f64]) -> Vec<f64> {
    vec![]
}
fn no_jacobian(_: &[f64]) -> Vec<Vec<f64>> {
    vec![]
}

#[test]
fn active_lower_bound_multiplier() {
    // min x² s.t. x ≥ 1: x* = 1, z_L = 2
    let p = Toy {
        lo: vec![1.0],
        hi: vec![INF],
        x0: vec![3.0],
        f: |x| x[0] * x[0],
        g: |x| vec![2.0 * x[0]],
        c: no_constraints,
        j: no_jacobian,
    };
    let sol = solve(&p, &SolverOptions::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Converged);
    assert!((sol.x[0] - 1.0).abs() < 1e-8, "{}", sol.x[0]);
    assert!((sol.multipliers.lower[0] - 2.0).abs() < 1e-6);
    assert!(kkt_report(&p, &sol).satisfied(1e-7));
}

#[test]
fn equality_multiplier_sign() {
    // min (x−2)² + (y−1)² s.t. x + y − 1 = 0 → (1, 0), ∇f = Jᵀλ gives λ = −2
    let p = Toy {
        lo: vec![-INF; 2],
        hi: vec![INF; 2],
        x0: vec![0.0, 0.0],
        f: |x| (x[0] - 2.0).powi(2) + (x[1] - 1.0).powi(2),
        g: |x| vec![2.0 * (x[0] - 2.0), 2.0 * (x[1] - 1.0)],
        c: |x| vec![x[0] + x[1] - 1.0],
        j: |_| vec![vec![1.0, 1.0]],
    };
    for kind in [LinearSolverKind::Dense, LinearSolverKind::Sparse] {
        let opts = SolverOptions {
            linear_solver: kind,
            ..SolverOptions::default()
        };
        let sol = solve(&p, &opts).unwrap();
        assert!(sol.converged());
        assert!((sol.x[0] - 1.0).abs() < 1e-9 && sol.x[1].abs() < 1e-9);
        assert!((sol.multipliers.equality[0] + 2.0).abs() < 1e-8);
    }
}

#[test]
fn nonconvex_objective_with_circle_constraint() {
    // min −x·y on x² + y² = 2, x, y ≥ 0 → (1, 1)
    let p = Toy {
        lo: vec![0.0, 0.0],
        hi: vec![INF, INF],
        x0: vec![1.3, 0.2],
        f: |x| -x[0] * x[1],
        g: |x| vec![-x[1], -x[0]],
        c: |x| vec![x[0] * x[0] + x[1] * x[1] - 2.0],
        j: |x| vec![vec![2.0 * x[0], 2.0 * x[1]]],
    };
    let sol = solve(&p, &SolverOptions::default()).unwrap();
    assert!(sol.converged(), "{:?}", sol.diagnostic);
    assert!((sol.x[0] - 1.0).abs() < 1e-7 && (sol.x[1] - 1.0).abs() < 1e-7);
    // barrier parameter never increases
    assert!(sol.mu_history.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn contradictory_constraints_are_infeasible() {
    let p = Toy {
        lo: vec![-INF],
        hi: vec![INF],
        x0: vec![0.3],
        f: |x| x[0] * x[0],
        g: |x| vec![2.0 * x[0]],
        c: |x| vec![x[0], x[0] - 1.0],
        j: |_| vec![vec![1.0], vec![1.0]],
    };
    let sol = solve(&p, &SolverOptions::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Infeasible);
    assert!(sol.diagnostic.is_some());
    // least-violation point is x = 0.5
    assert!((sol.x[0] - 0.5).abs() < 1e-3, "{}", sol.x[0]);
    assert!((sol.max_residual - 0.5).abs() < 1e-3);
}

#[test]
fn bound_excludes_equality_solution() {
    // x² = 4 but x ≤ 1
    let p = Toy {
        lo: vec![0.0],
        hi: vec![1.0],
        x0: vec![0.5],
        f: |x| x[0],
        g: |_| vec![1.0],
        c: |x| vec![x[0] * x[0] - 4.0],
        j: |x| vec![vec![2.0 * x[0]]],
    };
    let sol = solve(&p, &SolverOptions::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Infeasible);
    assert!(sol.x[0] <= 1.0 && sol.x[0] > 0.99);
}

#[test]
fn fixed_variables_are_eliminated() {
    // y fixed at 2: min (x − y)² + x → x = 1.5, stationarity in y absorbed by bounds
    let p = Toy {
        lo: vec![-INF, 2.0],
        hi: vec![INF, 2.0],
        x0: vec![0.0, 0.0],
        f: |x| (x[0] - x[1]).powi(2) + x[0],
        g: |x| vec![2.0 * (x[0] - x[1]) + 1.0, -2.0 * (x[0] - x[1])],
        c: no_constraints,
        j: no_jacobian,
    };
    let sol = solve(&p, &SolverOptions::default()).unwrap();
    assert!(sol.converged());
    assert_eq!(sol.x[1], 2.0);
    assert!((sol.x[0] - 1.5).abs() < 1e-9);
    assert!(kkt_report(&p, &sol).satisfied(1e-8));
}

#[test]
fn inverted_bounds_are_rejected() {
    let p = Toy {
        lo: vec![1.0],
        hi: vec![0.0],
        x0: vec![0.5],
        f: |x| x[0],
        g: |_| vec![1.0],
        c: no_constraints,
        j: no_jacobian,
    };
    assert!(solve(&p, &SolverOptions::default()).is_err());
}

#[test]
fn rosenbrock_with_iteration_cap() {
    let p = Toy {
        lo: vec![-INF; 2],
        hi: vec![INF; 2],
        x0: vec![-1.2, 1.0],
        f: |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
        g: |x| {
            vec![
                -400.0 * x[0] * (x[1] - x[0] * x[0]) - 2.0 * (1.0 - x[0]),
                200.0 * (x[1] - x[0] * x[0]),
            ]
        },
        c: no_constraints,
        j: no_jacobian,
    };
    let sol = solve(&p, &SolverOptions::default()).unwrap();
    assert!(sol.converged());
    assert!((sol.x[0] - 1.0).abs() < 1e-6 && (sol.x[1] - 1.0).abs() < 1e-6);
    let capped = solve(
        &p,
        &SolverOptions {
            max_iter: 3,
            ..SolverOptions::default()
        },
    )
    .unwrap();
    assert_eq!(capped.status, SolveStatus::IterationLimit);
    assert_eq!(capped.iterations, 3);
}

fn equality_qp() -> Toy {
    Toy {
        lo: vec![-INF; 2],
        hi: vec![INF; 2],
        x0: vec![0.0, 0.0],
        f: |x| (x[0] - 2.0).powi(2) + (x[1] - 1.0).powi(2),
        g: |x| vec![2.0 * (x[0] - 2.0), 2.0 * (x[1] - 1.0)],
        c: |x| vec![x[0] + x[1] - 1.0],
        j: |_| vec![vec![1.0, 1.0]],
    }
}

#[test]
fn kkt_report_of_converged_qp_is_tight() {
    let p = equality_qp();
    let sol = solve(&p, &SolverOptions::default()).unwrap();
    let r = kkt_report(&p, &sol);
    assert!(
        r.feasibility <= 1e-6 && r.stationarity <= 1e-6 && r.complementarity <= 1e-6,
        "{r:?}"
    );
}

#[test]
fn kkt_report_detects_perturbed_point() {
    let p = equality_qp();
    let mut sol = solve(&p, &SolverOptions::default()).unwrap();
    sol.x[0] += 0.1;
    let r = kkt_report(&p, &sol);
    assert!(r.stationarity > 1e-3 || r.feasibility > 1e-3, "{r:?}");
}

#[test]
fn infeasible_certificate_matches_reported_residual() {
    let p = Toy {
        lo: vec![-INF],
        hi: vec![INF],
        x0: vec![0.3],
        f: |x| x[0] * x[0],
        g: |x| vec![2.0 * x[0]],
        c: |x| vec![x[0], x[0] - 1.0],
        j: |_| vec![vec![1.0], vec![1.0]],
    };
    let sol = solve(&p, &SolverOptions::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Infeasible);
    assert_eq!(kkt_report(&p, &sol).feasibility, sol.max_residual);
}

#[test]
fn repeated_solves_are_bitwise_identical() {
    let p = Toy {
        lo: vec![0.0, 0.0],
        hi: vec![INF, INF],
        x0: vec![1.3, 0.2],
        f: |x| -x[0] * x[1],
        g: |x| vec![-x[1], -x[0]],
        c: |x| vec![x[0] * x[0] + x[1] * x[1] - 2.0],
        j: |x| vec![vec![2.0 * x[0], 2.0 * x[1]]],
    };
    let a = solve(&p, &SolverOptions::default()).unwrap();
    let b = solve(&p, &SolverOptions::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.mu_history, b.mu_history);
}
