//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn cholesky(m: &DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(context, "matrix has non-finite entries"));
    }
    Cholesky::new(m.clone())
        .ok_or_else(|| Error::numerical(context, "matrix is not positive definite"))
}

/// Cholesky with diagonal jitter escalated from `start` to `max` by factors
/// of ten. Returns the factor and the jitter that was needed.
pub fn cholesky_jittered(
    m: &DMatrix<f64>,
    start: f64,
    max: f64,
    context: &str,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok((c, 0.0));
    }
    let scale = (m.trace() / m.nrows().max(1) as f64).abs().max(1.0);
    let mut jitter = start;
    while jitter <= max * (1.0 + 1e-12) {
        let mut a = m.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += jitter * scale;
        }
        if let Some(c) = Cholesky::new(a) {
            log::debug!("{context}: cholesky needed jitter {jitter:e}");
            return Ok((c, jitter * scale));
        }
        jitter *= 10.0;
    }
    Err(Error::numerical(
        context,
        format!("cholesky failed with jitter up to {max:e}"),
    ))
}

pub fn log_det_chol(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Clamps the eigenvalues of a symmetric matrix from below.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = SymmetricEigen::new(s);
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        let mut out = m.clone();
        symmetrize(&mut out);
        return out;
    }
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    out
}

/// `log N(x | mean, Σ)` given the Cholesky factor of `Σ`.
pub fn gaussian_log_density(
    x: &DVector<f64>,
    mean: &DVector<f64>,
    chol: &Cholesky<f64, Dyn>,
) -> f64 {
    let d = x.len() as f64;
    let diff = x - mean;
    let y = chol
        .l_dirty()
        .solve_lower_triangular(&diff)
        .expect("triangular solve");
    -0.5 * (d * LN_2PI + log_det_chol(chol) + y.norm_squared())
}

/// Numerically stable `log Σ exp(v_i)`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
