//! Symmetric eigendecomposition (cyclic Jacobi) and the inverse fourth root
//! used by the Shampoo preconditioner.

use super::Matrix;
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-9;
const PSD_TOL: f64 = 1e-9;
const MAX_SWEEPS: usize = 100;

/// Eigenvalues in ascending order with matching orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl SymEigen {
    /// `Q · diag(f(λ)) · Qᵀ`
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.eigenvalues.len();
        let q = &self.eigenvectors;
        let scaled = Matrix::from_fn(n, n, |r, c| q.get(r, c) * f(self.eigenvalues[c]));
        let mut out = scaled.matmul_t(q);
        out.symmetrize();
        out
    }

    pub fn reconstruct(&self) -> Matrix {
        self.reconstruct_with(|v| v)
    }
}

fn check_symmetric(m: &Matrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Shape(format!("expected square matrix, got {}x{}", m.rows(), m.cols())));
    }
    let scale = m.max_abs().max(1.0);
    let asym = m.max_asymmetry();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::Shape(format!("matrix not symmetric (max |m - mᵀ| = {asym:e})")));
    }
    if !m.is_finite() {
        return Err(Error::Shape("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn sym_eigen(m: &Matrix) -> Result<SymEigen> {
    check_symmetric(m)?;
    let n = m.rows();
    let mut a = m.clone();
    a.symmetrize();
    let mut v = Matrix::identity(n);

    let total_sq = a.frobenius_norm().powi(2);
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a.get(p, q) * a.get(p, q);
            }
        }
        if off <= 1e-30 * total_sq || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(i, i).total_cmp(&a.get(j, j)));
    let eigenvalues = order.iter().map(|&i| a.get(i, i)).collect();
    let eigenvectors = Matrix::from_fn(n, n, |r, c| v.get(r, order[c]));
    Ok(SymEigen { eigenvalues, eigenvectors })
}

/// `(m + ridge·I)^{-1/4}` for symmetric PSD `m`.
pub fn inv_fourth_root(m: &Matrix, ridge: f64) -> Result<Matrix> {
    let eig = sym_eigen(&m.add_ridge(ridge))?;
    let min = eig.eigenvalues.first().copied().unwrap_or(1.0);
    if min < -PSD_TOL {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    if min <= 0.0 {
        // Singular after ridge: (near-)zero eigenvalue has no inverse root.
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    Ok(eig.reconstruct_with(|l| l.powf(-0.25)))
}
