//! Solves of the symmetric indefinite system
//!
//! ```txt
//!     [ W + Σ + δw·I   Jᵀ    ] [dx]   [r_x]
//!     [ J              −δc·I ] [ν ] = [r_c]
//! ```

use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{DMatrix, DVector};

use crate::sparse::Triplets;

pub(crate) struct KktMatrix<'a> {
    pub hessian: &'a Triplets,
    pub sigma: &'a [f64],
    pub jacobian: &'a Triplets,
    pub delta_w: f64,
    pub delta_c: f64,
}

impl KktMatrix<'_> {
    fn dims(&self) -> (usize, usize) {
        (self.sigma.len(), self.jacobian.nrows)
    }

    fn entries(&self) -> Vec<(usize, usize, f64)> {
        let (n, m) = self.dims();
        let mut e = Vec::with_capacity(
            self.hessian.entries.len() + 2 * self.jacobian.entries.len() + n + m,
        );
        e.extend(self.hessian.entries.iter().copied());
        for i in 0..n {
            e.push((i, i, self.sigma[i] + self.delta_w));
        }
        for &(r, c, v) in &self.jacobian.entries {
            e.push((n + r, c, v));
            e.push((c, n + r, v));
        }
        if self.delta_c != 0.0 {
            for i in 0..m {
                e.push((n + i, n + i, -self.delta_c));
            }
        }
        e
    }

    /// Returns `(dx, ν)`, or `None` when the matrix is numerically singular.
    pub fn solve(&self, rhs_x: &[f64], rhs_c: &[f64], dense: bool) -> Option<(Vec<f64>, Vec<f64>)> {
        let (n, m) = self.dims();
        let dim = n + m;
        let entries = self.entries();
        let rhs: Vec<f64> = rhs_x.iter().chain(rhs_c).copied().collect();
        let factor: Box<dyn Fn(&[f64]) -> Option<Vec<f64>>> = if dense {
            let lu = factor_dense(dim, &entries);
            Box::new(move |b| {
                lu.solve(&DVector::from_column_slice(b))
                    .map(|x| x.as_slice().to_vec())
            })
        } else {
            let lu = factor_sparse(dim, &entries)?;
            Box::new(move |b| {
                let b = faer::Mat::<f64>::from_fn(dim, 1, |i, _| b[i]);
                let x = faer::linalg::solvers::Solve::solve(&lu, &b);
                Some((0..dim).map(|i| x[(i, 0)]).collect())
            })
        };
        let mut sol = factor(&rhs)?;
        // a few rounds of iterative refinement, then a backward error check
        // that catches near-singular pivots
        let mut bad = true;
        for round in 0..4 {
            if !sol.iter().all(|v| v.is_finite()) {
                return None;
            }
            let mut resid = rhs.clone();
            let mut scale = vec![0.0f64; dim];
            for &(r, c, v) in &entries {
                resid[r] -= v * sol[c];
                scale[r] += (v * sol[c]).abs();
            }
            let worst = resid
                .iter()
                .zip(&scale)
                .zip(&rhs)
                .map(|((r, s), b)| r.abs() / (s + b.abs() + 1e-300))
                .fold(0.0, f64::max);
            if worst <= 1e-14 {
                bad = false;
                break;
            }
            bad = worst > 1e-8;
            if round == 3 {
                break;
            }
            let corr = factor(&resid)?;
            for (x, d) in sol.iter_mut().zip(corr) {
                *x += d;
            }
        }
        if bad {
            return None;
        }
        let (dx, nu) = sol.split_at(n);
        Some((dx.to_vec(), nu.to_vec()))
    }
}

fn factor_dense(
    dim: usize,
    entries: &[(usize, usize, f64)],
) -> nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn> {
    let mut k = DMatrix::<f64>::zeros(dim, dim);
    for &(r, c, v) in entries {
        k[(r, c)] += v;
    }
    k.lu()
}

fn factor_sparse(
    dim: usize,
    entries: &[(usize, usize, f64)],
) -> Option<faer::sparse::linalg::solvers::Lu<usize, f64>> {
    let triplets: Vec<Triplet<usize, usize, f64>> = entries
        .iter()
        .map(|&(r, c, v)| Triplet::new(r, c, v))
        .collect();
    let k = SparseColMat::<usize, f64>::try_new_from_triplets(dim, dim, &triplets).ok()?;
    k.sp_lu().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn system() -> (Triplets, Vec<f64>, Triplets) {
        let mut h = Triplets::new(2, 2);
        h.push(0, 0, 2.0);
        h.push(1, 1, 2.0);
        let mut j = Triplets::new(1, 2);
        j.push(0, 0, 1.0);
        j.push(0, 1, 1.0);
        (h, vec![0.0, 0.0], j)
    }

    #[test]
    fn dense_and_sparse_agree() {
        let (h, sigma, j) = system();
        let k = KktMatrix {
            hessian: &h,
            sigma: &sigma,
            jacobian: &j,
            delta_w: 0.0,
            delta_c: 0.0,
        };
        let (dx_d, nu_d) = k.solve(&[2.0, 0.0], &[1.0], true).unwrap();
        let (dx_s, nu_s) = k.solve(&[2.0, 0.0], &[1.0], false).unwrap();
        for (a, b) in dx_d.iter().chain(&nu_d).zip(dx_s.iter().chain(&nu_s)) {
            assert!((a - b).abs() < 1e-12);
        }
        // 2dx0 + ν = 2, 2dx1 + ν = 0, dx0 + dx1 = 1
        assert!((dx_d[0] - 1.0).abs() < 1e-12 && dx_d[1].abs() < 1e-12);
    }

    #[test]
    fn singular_system_is_reported() {
        let h = Triplets::new(1, 1);
        let mut j = Triplets::new(2, 1);
        j.push(0, 0, 1.0);
        j.push(1, 0, 1.0);
        let k = KktMatrix {
            hessian: &h,
            sigma: &[0.0],
            jacobian: &j,
            delta_w: 0.0,
            delta_c: 0.0,
        };
        assert!(k.solve(&[0.0], &[0.0, 1.0], true).is_none());
    }
}
