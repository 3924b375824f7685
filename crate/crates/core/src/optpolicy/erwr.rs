use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::policy::GaussianOptionPolicy;
use crate::error::{Error, Result};
use crate::features::FeatureMap;

/// Ridge `λ = coeff · tr(Φᵀ diag(w) Φ) / out_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ridge {
    pub coeff: f64,
}

impl Default for Ridge {
    fn default() -> Self {
        Self { coeff: 1e-6 }
    }
}

/// Weighted maximum-likelihood fit of a linear-Gaussian policy.
///
/// Mean gains solve `(Φᵀ diag(w) Φ + λI) W = Φᵀ diag(w) Ξ`; the covariance is
/// the weighted residual covariance, eigenvalue-floored.
pub fn erwr_update(
    contexts: &[&[f64]],
    params: &[&[f64]],
    weights: &[f64],
    fmap: &FeatureMap,
    ridge: Ridge,
) -> Result<GaussianOptionPolicy> {
    let n = contexts.len();
    if n == 0 || params.len() != n || weights.len() != n {
        return Err(Error::invalid(
            "erwr_update needs equal-length, non-empty inputs",
        ));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid("weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("all weights are zero"));
    }
    let d = params[0].len();
    if params.iter().any(|p| p.len() != d) {
        return Err(Error::invalid("inconsistent parameter dimensions"));
    }
    let k = fmap.out_dim();
    let mut phi = DMatrix::zeros(n, k);
    for (i, s) in contexts.iter().enumerate() {
        phi.row_mut(i).copy_from(&fmap.eval(s)?.transpose());
    }
    let xi = DMatrix::from_fn(n, d, |i, j| params[i][j]);
    // Normalizing the weights makes the solution invariant to their scale.
    let w: Vec<f64> = weights.iter().map(|v| v / total).collect();

    let mut wphi = phi.clone();
    for (i, wi) in w.iter().enumerate() {
        wphi.row_mut(i).scale_mut(*wi);
    }
    let mut gram = phi.transpose() * &wphi;
    let lambda = ridge.coeff * gram.trace() / k as f64;
    for j in 0..k {
        gram[(j, j)] += lambda.max(f64::MIN_POSITIVE);
    }
    let rhs = wphi.transpose() * &xi;
    let gains = match gram.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::numerical("erwr_update", "normal equations are singular"))?,
    };

    let resid = &xi - &phi * &gains;
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..n {
        let r = resid.row(i);
        cov += r.transpose() * r * w[i];
    }
    GaussianOptionPolicy::new(gains, cov, fmap.clone())
}
