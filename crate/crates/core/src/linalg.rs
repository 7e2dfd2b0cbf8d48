//! Least squares over a Euclidean ball.
//!
//! Problems arrive as normal equations `min_{|w| <= D} w'Gw - 2b'w` with `G`
//! positive semidefinite. `G + ridge I` is eigendecomposed once; directions
//! whose eigenvalue is negligible next to the largest are dropped, so a
//! rank-deficient problem yields its minimum-norm minimizer. When that point
//! lies outside the ball, the multiplier `lambda` with
//! `|(G + ridge I + lambda I)^-1 b| = D` is found by bisection.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, Error, Result};
use crate::model::{dot, project_in_place};

pub const RIDGE: f64 = 1e-10;

const NULL_CUTOFF: f64 = 1e-14;
const MAX_BISECTIONS: usize = 200;

/// An eigendecomposition of a Gram matrix, reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct GramFactor {
    dim: usize,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    keep: Vec<bool>,
}

impl GramFactor {
    /// `gram` is row-major `dim x dim` and must be symmetric.
    pub fn new(gram: &[f64], dim: usize) -> Result<Self> {
        check_dim("gram matrix entries", dim * dim, gram.len())?;
        if gram.iter().any(|v| !v.is_finite()) {
            return Err(Error::invariant("gram matrix has a non-finite entry"));
        }
        if dim == 0 {
            return Ok(GramFactor {
                dim,
                eigenvalues: Vec::new(),
                eigenvectors: DMatrix::zeros(0, 0),
                keep: Vec::new(),
            });
        }
        let m = DMatrix::from_row_slice(dim, dim, gram);
        let sym = (&m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let eigenvalues: Vec<f64> = eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
        let top = eigenvalues.iter().copied().fold(0.0, f64::max);
        let keep = eigenvalues.iter().map(|&v| top > 0.0 && v > NULL_CUTOFF * top).collect();
        Ok(GramFactor {
            dim,
            eigenvalues,
            eigenvectors: eig.eigenvectors,
            keep,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn coefficients(&self, b: &[f64]) -> Vec<f64> {
        let b = DVector::from_column_slice(b);
        let c = self.eigenvectors.transpose() * b;
        c.iter()
            .zip(&self.keep)
            .map(|(&v, &k)| if k { v } else { 0.0 })
            .collect()
    }

    fn assemble(&self, c: &[f64], lambda: f64) -> Vec<f64> {
        let scaled: Vec<f64> = c
            .iter()
            .zip(&self.eigenvalues)
            .map(|(&ck, &mu)| if ck == 0.0 { 0.0 } else { ck / (mu + RIDGE + lambda) })
            .collect();
        let w = &self.eigenvectors * DVector::from_vec(scaled);
        w.iter().copied().collect()
    }

    fn norm_at(&self, c: &[f64], lambda: f64) -> f64 {
        c.iter()
            .zip(&self.eigenvalues)
            .map(|(&ck, &mu)| {
                let v = ck / (mu + RIDGE + lambda);
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Minimizer of `w'Gw - 2b'w` over the ball of radius `radius`.
    ///
    /// When the constraint binds, the multiplier is bisected until its
    /// bracket is relatively narrower than `min(tol, 1e-10)`; the returned
    /// point is from the feasible end of the bracket.
    pub fn solve(&self, b: &[f64], radius: f64, tol: f64) -> Result<Vec<f64>> {
        check_dim("normal-equation right-hand side", self.dim, b.len())?;
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::config(format!("ball radius must be positive, got {radius}")));
        }
        if !(tol > 0.0) {
            return Err(Error::config(format!("solver tolerance must be positive, got {tol}")));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::invariant("right-hand side has a non-finite entry"));
        }
        if self.dim == 0 {
            return Ok(Vec::new());
        }
        let c = self.coefficients(b);
        if self.norm_at(&c, 0.0) <= radius {
            let mut w = self.assemble(&c, 0.0);
            project_in_place(&mut w, radius);
            return Ok(w);
        }
        let rel = tol.min(1e-10);
        let mut lo = 0.0;
        let mut hi = dot(&c, &c).sqrt() / radius;
        while self.norm_at(&c, hi) > radius {
            hi *= 2.0;
        }
        for _ in 0..MAX_BISECTIONS {
            if hi - lo <= rel * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.norm_at(&c, mid) > radius {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut w = self.assemble(&c, hi);
        project_in_place(&mut w, radius);
        Ok(w)
    }
}

/// Solves `min_{|w| <= radius} w'Gw - 2b'w` for a row-major Gram matrix.
pub fn solve_normal_equations(gram: &[f64], b: &[f64], radius: f64, tol: f64) -> Result<Vec<f64>> {
    GramFactor::new(gram, b.len())?.solve(b, radius, tol)
}

/// `min_{|w| <= radius} sum_s (targets[s] - w . rows[s])^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedLsProblem {
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub radius: f64,
}

impl ConstrainedLsProblem {
    pub fn new(dim: usize, rows: Vec<Vec<f64>>, targets: Vec<f64>, radius: f64) -> Result<Self> {
        check_dim("least-squares targets", rows.len(), targets.len())?;
        for r in &rows {
            check_dim("least-squares row", dim, r.len())?;
        }
        Ok(ConstrainedLsProblem {
            dim,
            rows,
            targets,
            radius,
        })
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(&self.targets)
            .map(|(r, &y)| {
                let e = y - dot(w, r);
                e * e
            })
            .sum()
    }

    pub fn normal_equations(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let mut gram = vec![0.0; d * d];
        let mut b = vec![0.0; d];
        for (r, &y) in self.rows.iter().zip(&self.targets) {
            for j in 0..d {
                b[j] += r[j] * y;
                for k in 0..d {
                    gram[j * d + k] += r[j] * r[k];
                }
            }
        }
        (gram, b)
    }

    /// With no rows every point is optimal; the origin is returned.
    pub fn solve(&self, tol: f64) -> Result<Vec<f64>> {
        let (gram, b) = self.normal_equations();
        solve_normal_equations(&gram, &b, self.radius, tol)
    }
}

pub fn solve_constrained_ls(p: &ConstrainedLsProblem, tol: f64) -> Result<Vec<f64>> {
    p.solve(tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::norm;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn interior_optimum() {
        let p = ConstrainedLsProblem::new(1, vec![vec![1.0]], vec![1.0], 10.0).unwrap();
        assert!(close(&p.solve(1e-12).unwrap(), &[1.0], 1e-8));
    }

    #[test]
    fn one_dimensional_clamp() {
        let p = ConstrainedLsProblem::new(1, vec![vec![1.0]], vec![2.0], 1.0).unwrap();
        let w = p.solve(1e-12).unwrap();
        assert!(close(&w, &[1.0], 1e-9));
        assert!(norm(&w) <= 1.0);
    }

    #[test]
    fn rank_deficient_gives_minimum_norm() {
        // One sample in two dimensions: the minimizers form the line w0 + w1 = 2.
        let p = ConstrainedLsProblem::new(2, vec![vec![1.0, 1.0]], vec![2.0], 100.0).unwrap();
        assert!(close(&p.solve(1e-12).unwrap(), &[1.0, 1.0], 1e-8));
    }

    #[test]
    fn zero_gram_gives_origin() {
        let w = solve_normal_equations(&[0.0; 4], &[0.0, 0.0], 1.0, 1e-9).unwrap();
        assert_eq!(w, vec![0.0, 0.0]);
    }

    #[test]
    fn factor_reuse_matches_fresh_solve() {
        let gram = [2.0, 0.5, 0.5, 1.0];
        let f = GramFactor::new(&gram, 2).unwrap();
        for b in [[1.0, 0.0], [0.0, 3.0], [-4.0, 2.0]] {
            assert_eq!(f.solve(&b, 1.5, 1e-9).unwrap(), solve_normal_equations(&gram, &b, 1.5, 1e-9).unwrap());
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(ConstrainedLsProblem::new(1, vec![vec![1.0]], vec![], 1.0).is_err());
        assert!(ConstrainedLsProblem::new(1, vec![vec![1.0], vec![1.0, 2.0]], vec![0.0, 0.0], 1.0).is_err());
        let p = ConstrainedLsProblem::new(1, vec![vec![1.0]], vec![1.0], 0.0).unwrap();
        assert!(p.solve(1e-9).is_err());
        assert!(solve_normal_equations(&[1.0], &[1.0, 2.0], 1.0, 1e-9).is_err());
    }

    #[test]
    fn empty_problem_gives_origin() {
        let p = ConstrainedLsProblem::new(3, vec![], vec![], 1.0).unwrap();
        assert_eq!(p.solve(1e-9).unwrap(), vec![0.0; 3]);
    }
}
