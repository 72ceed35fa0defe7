//! Dense linear-algebra helpers shared by the modules.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Moore-Penrose pseudoinverse with the same automatic cutoff as
/// [`crate::data_window::numerical_rank`].
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let svd = SVD::new(m.clone(), true, true);
    let smax = svd.singular_values.max();
    let tol = (r.max(c) as f64) * f64::EPSILON * smax;
    svd.pseudo_inverse(tol).unwrap_or_else(|_| DMatrix::zeros(c, r))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Solves `a P aᵀ - P + q = 0` for `P` by vectorization, followed by a few
/// steps of iterative refinement.
pub fn stein(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let radius = spectral_radius(a);
    if radius >= 1.0 {
        return Err(Error::Unstable { radius });
    }
    // vec(a P aᵀ) = (a ⊗ a) vec(P) for column-major vec.
    let op = DMatrix::<f64>::identity(n * n, n * n) - a.kronecker(a);
    let lu = op.clone().lu();
    let rhs = DVector::from_column_slice(q.as_slice());
    let mut sol = lu
        .solve(&rhs)
        .ok_or(Error::Unstable { radius })?;
    for _ in 0..3 {
        let resid = &rhs - &op * &sol;
        match lu.solve(&resid) {
            Some(corr) => sol += corr,
            None => break,
        }
    }
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok(symmetrize(&p))
}

/// Row-major nested list, the layout used in scenario files and reports.
pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn ser_rows<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::Serialize;
    rows(m).serialize(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn stein_scalar_closed_form() {
        let a = DMatrix::from_element(1, 1, 0.5);
        let p = stein(&a, &DMatrix::identity(1, 1)).unwrap();
        assert_relative_eq!(p[(0, 0)], 1.0 / (1.0 - 0.25), epsilon = 1e-14);
    }

    #[test]
    fn stein_rejects_unstable() {
        let a = DMatrix::from_element(1, 1, 1.5);
        assert!(matches!(
            stein(&a, &DMatrix::identity(1, 1)),
            Err(Error::Unstable { .. })
        ));
    }

    #[test]
    fn norms_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![-3.0, 2.0]));
        assert_relative_eq!(spectral_norm(&m), 3.0, epsilon = 1e-14);
        assert_relative_eq!(spectral_radius(&m), 3.0, epsilon = 1e-14);
    }
}
