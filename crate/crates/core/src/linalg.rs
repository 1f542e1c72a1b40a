//! Small dense symmetric-positive-definite helpers shared by the regression,
//! uncertainty and coverage code. Dimensions here are tiny (d ≤ a few dozen),
//! so everything is direct factorization, no iterative solvers.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Cholesky factorization with a tiny diagonal jitter retry.
///
/// The Gram matrices we factor are `lambda*I + sum(phi phi^T / sigma^2)` with
/// `lambda > 0`, so failure is a numerical event only; one jitter of 1e-12
/// restores positive definiteness in that event.
pub fn spd_cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let d = m.nrows();
    let jittered = m + DMatrix::identity(d, d) * 1e-12;
    Cholesky::new(jittered)
        .ok_or_else(|| Error::InvalidArgument("matrix is not positive definite".into()))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// `v^T M^{-1} v` through a Cholesky solve.
pub fn quad_form_inv(chol: &Cholesky<f64, nalgebra::Dyn>, v: &DVector<f64>) -> f64 {
    let x = chol.solve(v);
    v.dot(&x)
}

/// Gram matrix `lambda*I + sum_i w_i . phi_i phi_i^T` for weights `w_i = 1/sigma_i^2`.
pub fn weighted_gram(phis: &[DVector<f64>], sigma_sq: &[f64], lambda: f64, d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::identity(d, d) * lambda;
    for (phi, s2) in phis.iter().zip(sigma_sq) {
        let w = 1.0 / s2;
        // rank-one update, lower triangle mirrored afterwards would not be
        // faster at these sizes; ger is clear enough
        m.ger(w, phi, phi, 1.0);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quad_form_matches_rank_one_identity() {
        // lambda=1 plus one unit vector: phi^T (I + e1 e1^T)^{-1} phi = 1/2 at e1.
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let gram = weighted_gram(&[e1.clone()], &[1.0], 1.0, 2);
        let chol = spd_cholesky(&gram).unwrap();
        let q = quad_form_inv(&chol, &e1);
        assert!((q - 0.5).abs() < 1e-14);
    }

    #[test]
    fn min_eigenvalue_of_diag() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 0.25, 1.0]));
        assert!((min_eigenvalue(&m) - 0.25).abs() < 1e-14);
    }
}
