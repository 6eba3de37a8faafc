//! Small dense linear-algebra helpers shared by the risk models and optimizers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Ratio of largest to smallest eigenvalue magnitude of a symmetric matrix.
/// Infinite when the smallest eigenvalue is not positive.
pub fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical {
            message: format!("{what} has non-finite entries"),
            condition: f64::INFINITY,
        });
    }
    let copy = m.clone();
    Cholesky::new(m).ok_or_else(|| Error::Numerical {
        message: format!("{what} is not positive-definite"),
        condition: condition_estimate(&copy),
    })
}

/// Solves `m x = rhs` for symmetric positive-definite `m`.
pub fn spd_solve(m: DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    Ok(cholesky(m, what)?.solve(rhs))
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(cholesky(m, what)?.inverse())
}

pub fn gather(v: &DVector<f64>, subset: &[usize]) -> DVector<f64> {
    DVector::from_iterator(subset.len(), subset.iter().map(|&i| v[i]))
}

/// Places `values` at positions `subset` of a zero vector of length `n`.
pub fn scatter(values: &DVector<f64>, subset: &[usize], n: usize) -> DVector<f64> {
    let mut out = DVector::zeros(n);
    for (k, &i) in subset.iter().enumerate() {
        out[i] = values[k];
    }
    out
}

pub fn l1_norm(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Angle in radians between two nonzero vectors.
pub fn angle_between(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let cos = a.dot(b) / (a.norm() * b.norm());
    cos.clamp(-1.0, 1.0).acos()
}

/// Largest absolute difference, scaled by the largest magnitude in `reference`.
pub fn max_relative_diff(a: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    let scale = reference.amax().max(f64::MIN_POSITIVE);
    (a - reference).amax() / scale
}

pub fn check_len(v: &DVector<f64>, n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: v.len(),
        });
    }
    Ok(())
}

pub fn check_finite(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} has non-finite entries")))
    }
}
