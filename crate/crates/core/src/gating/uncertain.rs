use nalgebra::{DMatrix, DVector};

use super::gp::{GpReturnModel, VarianceCache};
use crate::error::{Error, Result};
use crate::linalg;

/// Gaussian input `z ~ N(mean, cov)` in raw coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertainInput {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
}

impl UncertainInput {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::invalid("uncertain input covariance shape mismatch"));
        }
        Ok(Self { mean, cov })
    }

    /// Option policy output `N(μ_o, Σ_o)` for `ξ` stacked with a known context.
    pub fn option_at_context(
        xi_mean: &[f64],
        xi_cov: &DMatrix<f64>,
        context: &[f64],
    ) -> Result<Self> {
        let dx = xi_mean.len();
        let d = dx + context.len();
        let mut mean = xi_mean.to_vec();
        mean.extend_from_slice(context);
        let mut cov = DMatrix::zeros(d, d);
        cov.view_mut((0, 0), (dx, dx)).copy_from(xi_cov);
        Self::new(mean, cov)
    }
}

impl GpReturnModel {
    fn variance_cache(&self) -> &VarianceCache {
        self.variance_cache.get_or_init(|| {
            let n = self.len();
            let kinv = self.kinv();
            let inv4l2 = 1.0 / (4.0 * self.hyper.length * self.hyper.length);
            let mut p = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    let mut r2 = 0.0;
                    for c in 0..self.inputs.ncols() {
                        let d = self.inputs[(i, c)] - self.inputs[(j, c)];
                        r2 += d * d;
                    }
                    let v = (kinv[(i, j)] - self.alpha[i] * self.alpha[j]) * (-r2 * inv4l2).exp();
                    p[(i, j)] = v;
                    p[(j, i)] = v;
                }
            }
            VarianceCache { weighted_pairs: p }
        })
    }

    /// Exact mean of the GP prediction at a Gaussian input.
    pub fn predict_uncertain_mean(&self, input: &UncertainInput) -> Result<f64> {
        let (mu, sigma) = self.scaled_input(input)?;
        let q = self.q_vector(&mu, &sigma)?;
        Ok(self.mean_offset + q.dot(&self.alpha))
    }

    /// Exact mean and variance of the GP prediction at a Gaussian input.
    /// With a zero covariance this is the ordinary latent prediction.
    pub fn predict_uncertain(&self, input: &UncertainInput) -> Result<(f64, f64)> {
        let (mu, sigma) = self.scaled_input(input)?;
        let q = self.q_vector(&mu, &sigma)?;
        let centered_mean = q.dot(&self.alpha);

        let d = mu.len();
        let l2 = self.hyper.length * self.hyper.length;
        let mut b = sigma.clone();
        for i in 0..d {
            b[(i, i)] += 0.5 * l2;
        }
        let chol_b = linalg::cholesky(&b, "uncertain GP variance")?;
        // |I + 2Σ/l²| = |B| / (l²/2)^d
        let log_det_ratio = linalg::log_det_chol(&chol_b) - d as f64 * (0.5 * l2).ln();
        let sf2 = self.hyper.sigma_f * self.hyper.sigma_f;
        let c = sf2 * sf2 * (-0.5 * log_det_ratio).exp();

        let n = self.len();
        let mut u = DMatrix::zeros(d, n);
        for i in 0..n {
            let diff = DVector::from_fn(d, |k, _| self.inputs[(i, k)] - mu[k]);
            let ui = chol_b
                .l_dirty()
                .solve_lower_triangular(&diff)
                .ok_or_else(|| {
                    Error::numerical("uncertain GP variance", "triangular solve failed")
                })?;
            u.set_column(i, &ui);
        }
        let p = &self.variance_cache().weighted_pairs;
        let mut acc = 0.0;
        for i in 0..n {
            let ui = u.column(i);
            let mut row = 0.0;
            for j in 0..i {
                let uj = u.column(j);
                let mut s2 = 0.0;
                for k in 0..d {
                    let v = ui[k] + uj[k];
                    s2 += v * v;
                }
                row += p[(i, j)] * (-0.125 * s2).exp();
            }
            acc += 2.0 * row + p[(i, i)] * (-0.5 * ui.norm_squared()).exp();
        }
        let mut var = sf2 - c * acc - centered_mean * centered_mean;
        if var < 0.0 {
            var = 0.0;
        }
        Ok((self.mean_offset + centered_mean, var))
    }

    fn scaled_input(&self, input: &UncertainInput) -> Result<(Vec<f64>, DMatrix<f64>)> {
        if input.mean.len() != self.dim() || input.cov.nrows() != self.dim() {
            return Err(Error::invalid("uncertain input dimension mismatch"));
        }
        Ok((
            self.scaler.apply(&input.mean),
            self.scaler.apply_cov(&input.cov),
        ))
    }

    fn q_vector(&self, mu: &[f64], sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
        let d = mu.len();
        let l2 = self.hyper.length * self.hyper.length;
        let mut a = sigma.clone();
        for i in 0..d {
            a[(i, i)] += l2;
        }
        let chol_a = linalg::cholesky(&a, "uncertain GP mean")?;
        // |I + Σ/l²| = |A| / l^{2d}
        let log_det_ratio = linalg::log_det_chol(&chol_a) - d as f64 * l2.ln();
        let scale = self.hyper.sigma_f * self.hyper.sigma_f * (-0.5 * log_det_ratio).exp();
        let n = self.len();
        let mut q = DVector::zeros(n);
        for i in 0..n {
            let diff = DVector::from_fn(d, |k, _| mu[k] - self.inputs[(i, k)]);
            let w = chol_a
                .l_dirty()
                .solve_lower_triangular(&diff)
                .ok_or_else(|| Error::numerical("uncertain GP mean", "triangular solve failed"))?;
            q[i] = scale * (-0.5 * w.norm_squared()).exp();
        }
        Ok(q)
    }
}
