//! Dense linear-algebra helpers shared by the geometry, estimator and
//! backfitting modules.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative singular-value cutoff below which a block counts as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Eigenvalue floor for the eigendecomposition fallback of [`Whitening`].
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Blocks with a condition number above this are reported as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Eigenvalues of a symmetric matrix, largest first.
pub fn symmetric_eigenvalues_desc(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let mut values: Vec<f64> = SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().collect();
    values.sort_by(|x, y| y.partial_cmp(x).unwrap());
    values
}

/// Spectral norm of a symmetric matrix.
pub fn symmetric_op_norm(a: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues_desc(a)
        .into_iter()
        .fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Condition number `λ_max / λ_min` of a symmetric positive semidefinite matrix.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let values = symmetric_eigenvalues_desc(a);
    match (values.first(), values.last()) {
        (Some(&max), Some(&min)) if min > 0.0 => max / min,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// A transform `T` with `T G Tᵀ = I` for a symmetric positive definite `G`.
///
/// Built from the Cholesky factor (`T = L⁻¹`) when it exists, otherwise from
/// the eigendecomposition with eigenvalues clamped at [`EIGEN_FLOOR`].
#[derive(Debug, Clone)]
pub struct Whitening {
    pub transform: DMatrix<f64>,
    pub condition: f64,
    pub used_cholesky: bool,
}

impl Whitening {
    pub fn new(gram: &DMatrix<f64>, block: &'static str) -> Result<Self> {
        let d = gram.nrows();
        if d == 0 {
            return Ok(Self {
                transform: DMatrix::zeros(0, 0),
                condition: 1.0,
                used_cholesky: true,
            });
        }
        let condition = condition_number(gram);
        if !condition.is_finite() || condition > MAX_CONDITION {
            return Err(Error::SingularBlock { block, condition });
        }
        if let Some(chol) = gram.clone().cholesky() {
            let lower = chol.l();
            let transform = lower
                .solve_lower_triangular(&DMatrix::identity(d, d))
                .ok_or(Error::SingularBlock { block, condition })?;
            return Ok(Self {
                transform,
                condition,
                used_cholesky: true,
            });
        }
        let eig = SymmetricEigen::new(gram.clone());
        let mut transform = eig.eigenvectors.transpose();
        for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
            let scale = 1.0 / lambda.max(EIGEN_FLOOR).sqrt();
            transform.row_mut(i).scale_mut(scale);
        }
        Ok(Self {
            transform,
            condition,
            used_cholesky: false,
        })
    }
}

/// Minimum-norm least-squares solution of `Z β ≈ y` through the singular
/// value decomposition, discarding singular values below `rel_tol · σ_max`.
///
/// Tall systems are first reduced by a Householder QR so the SVD only sees
/// the `d × d` triangular factor. When no singular value is discarded the
/// answer comes from back substitution on that factor instead, since
/// nalgebra's SVD of it is only accurate to about `1e-9` relative.
pub fn pinv_solve(z: &DMatrix<f64>, y: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    let (n, d) = z.shape();
    if d == 0 {
        return DVector::zeros(0);
    }
    if n > d {
        let qr = z.clone().qr();
        let mut qty = y.clone();
        qr.q_tr_mul(&mut qty);
        let r = qr.r();
        let rhs = qty.rows(0, d).into_owned();
        let s = r.singular_values();
        let s_max = s.max();
        if s.iter().all(|&v| v > rel_tol * s_max && v > 0.0) {
            if let Some(beta) = r.solve_upper_triangular(&rhs) {
                return beta;
            }
        }
        svd_solve(r, &rhs, rel_tol)
    } else {
        svd_solve(z.clone(), y, rel_tol)
    }
}

fn svd_solve(a: DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    let svd = a.svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
    let s_max = svd.singular_values.iter().fold(0.0_f64, |m, &s| m.max(s));
    let cutoff = rel_tol * s_max;
    let utb = u.transpose() * b;
    let mut scaled = DVector::zeros(svd.singular_values.len());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            scaled[i] = utb[i] / s;
        }
    }
    v_t.transpose() * scaled
}

/// Orthonormal basis of the column space of a full-column-rank matrix.
///
/// Fails with [`Error::SingularBlock`] when the smallest singular value falls
/// below [`RANK_TOLERANCE`] relative to the largest.
pub fn orthonormal_columns(z: &DMatrix<f64>, block: &'static str) -> Result<DMatrix<f64>> {
    let (n, d) = z.shape();
    if d == 0 {
        return Ok(DMatrix::zeros(n, 0));
    }
    if d > n {
        return Err(Error::SingularBlock {
            block,
            condition: f64::INFINITY,
        });
    }
    let qr = z.clone().qr();
    let r = qr.r();
    let sv = r.singular_values();
    let s_max = sv.iter().fold(0.0_f64, |m, &s| m.max(s));
    let s_min = sv.iter().fold(f64::INFINITY, |m, &s| m.min(s));
    if s_max == 0.0 || s_min <= RANK_TOLERANCE * s_max {
        return Err(Error::SingularBlock {
            block,
            condition: if s_min > 0.0 { s_max / s_min } else { f64::INFINITY },
        });
    }
    Ok(qr.q())
}

/// Largest singular value of a (possibly empty) matrix.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    a.singular_values().iter().fold(0.0_f64, |m, &s| m.max(s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitening_maps_gram_to_identity() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let w = Whitening::new(&a, "test").unwrap();
        let id = &w.transform * &a * w.transform.transpose();
        assert!((id - DMatrix::identity(3, 3)).abs().max() < 1e-12);
        assert!(w.used_cholesky);
    }

    #[test]
    fn singular_gram_reports_condition() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        match Whitening::new(&a, "V1") {
            Err(Error::SingularBlock { block, condition }) => {
                assert_eq!(block, "V1");
                assert!(condition > MAX_CONDITION);
            }
            other => panic!("expected singular block, got {other:?}"),
        }
    }

    #[test]
    fn pinv_returns_minimum_norm_solution() {
        // two identical columns: minimum-norm solution splits the weight
        let z = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let y = DVector::from_vec(vec![2.0, 4.0, 6.0]);
        let beta = pinv_solve(&z, &y, 1e-10);
        assert!((beta[0] - 1.0).abs() < 1e-12 && (beta[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pinv_handles_wide_systems() {
        let z = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let y = DVector::from_vec(vec![5.0]);
        let beta = pinv_solve(&z, &y, 1e-10);
        assert!((beta[0] - 0.6).abs() < 1e-12 && (beta[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn orthonormal_columns_rejects_rank_deficiency() {
        let z = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(orthonormal_columns(&z, "V2").is_err());
    }
}
