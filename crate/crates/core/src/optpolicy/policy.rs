use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::linalg::{self, cholesky};
use crate::rng::RngStream;

/// Smallest eigenvalue allowed in an option covariance.
pub const COV_FLOOR: f64 = 1e-8;

/// `N(ξ | Wᵀ φ(s), Σ)` with `W` of shape `(out_dim × d_ξ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianOptionPolicy {
    weights: DMatrix<f64>,
    covariance: DMatrix<f64>,
    fmap: FeatureMap,
    #[serde(skip)]
    chol_l: Option<DMatrix<f64>>,
}

impl GaussianOptionPolicy {
    pub fn new(weights: DMatrix<f64>, covariance: DMatrix<f64>, fmap: FeatureMap) -> Result<Self> {
        if weights.nrows() != fmap.out_dim() {
            return Err(Error::invalid(format!(
                "weight matrix has {} rows, feature map emits {}",
                weights.nrows(),
                fmap.out_dim()
            )));
        }
        let d = weights.ncols();
        if covariance.shape() != (d, d) {
            return Err(Error::invalid(
                "covariance shape does not match parameter dimension",
            ));
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite policy weights"));
        }
        let covariance = linalg::floor_eigenvalues(&covariance, COV_FLOOR);
        let chol = cholesky(&covariance, "option covariance")?;
        Ok(Self {
            weights,
            covariance,
            fmap,
            chol_l: Some(chol.l()),
        })
    }

    /// Context-independent Gaussian: a bias-only mean `mean` with covariance `cov`.
    pub fn constant(mean: &[f64], covariance: DMatrix<f64>, fmap: FeatureMap) -> Result<Self> {
        let out = fmap.out_dim();
        let mut w = DMatrix::zeros(out, mean.len());
        match &fmap {
            FeatureMap::Linear { .. } | FeatureMap::SquaredExponential { bias: true, .. } => {
                for (j, m) in mean.iter().enumerate() {
                    w[(out - 1, j)] = *m;
                }
            }
            FeatureMap::SquaredExponential { bias: false, .. } => {
                return Err(Error::invalid("constant policy needs a bias feature"));
            }
        }
        Self::new(w, covariance, fmap)
    }

    pub fn with_covariance(&self, covariance: DMatrix<f64>) -> Result<Self> {
        Self::new(self.weights.clone(), covariance, self.fmap.clone())
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.fmap
    }

    pub fn param_dim(&self) -> usize {
        self.weights.ncols()
    }

    fn chol_l(&self) -> DMatrix<f64> {
        match &self.chol_l {
            Some(l) => l.clone(),
            None => cholesky(&self.covariance, "option covariance")
                .expect("covariance validated at construction")
                .l(),
        }
    }

    /// `Wᵀ φ(s)`.
    pub fn mean(&self, s: &[f64]) -> Result<DVector<f64>> {
        let phi = self.fmap.eval(s)?;
        Ok(self.weights.tr_mul(&phi))
    }

    pub fn sample(&self, s: &[f64], rng: &mut RngStream) -> Result<DVector<f64>> {
        let mean = self.mean(s)?;
        let z = DVector::from_fn(mean.len(), |_, _| rng.normal());
        Ok(mean + self.chol_l() * z)
    }

    pub fn log_density(&self, s: &[f64], xi: &[f64]) -> Result<f64> {
        let mean = self.mean(s)?;
        if xi.len() != mean.len() {
            return Err(Error::invalid("parameter dimension mismatch"));
        }
        let l = self.chol_l();
        let diff = DVector::from_column_slice(xi) - &mean;
        let y = l
            .solve_lower_triangular(&diff)
            .ok_or_else(|| Error::numerical("policy density", "singular covariance factor"))?;
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(-0.5 * (mean.len() as f64 * linalg::LN_2PI + log_det + y.norm_squared()))
    }

    pub fn density(&self, s: &[f64], xi: &[f64]) -> Result<f64> {
        Ok(self.log_density(s, xi)?.exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn scalar_policy(w: &[f64], var: f64) -> GaussianOptionPolicy {
        GaussianOptionPolicy::new(
            DMatrix::from_column_slice(w.len(), 1, w),
            DMatrix::from_element(1, 1, var),
            FeatureMap::linear(w.len() - 1),
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_zero_mean() {
        let p = scalar_policy(&[0.0, 0.0], 1.0);
        for s in [-3.0, 0.0, 7.5] {
            assert_eq!(p.mean(&[s]).unwrap()[0], 0.0);
        }
    }

    #[test]
    fn linear_mean_examples() {
        let p = scalar_policy(&[1.0, 0.0], 1.0);
        assert_eq!(p.mean(&[3.0]).unwrap()[0], 3.0);
        // Identity gain plus bias row b: mean at s = 0 is b.
        let w = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.25, -2.0]);
        let p =
            GaussianOptionPolicy::new(w, DMatrix::identity(2, 2), FeatureMap::linear(2)).unwrap();
        assert_eq!(p.mean(&[0.0, 0.0]).unwrap().as_slice(), &[0.25, -2.0]);
    }

    #[test]
    fn density_peak_and_symmetry() {
        let p = scalar_policy(&[0.0, 1.0], 0.25);
        let peak = p.density(&[0.0], &[1.0]).unwrap();
        assert!((peak - 1.0 / (2.0 * PI * 0.25).sqrt()).abs() < 1e-14);
        let a = p.density(&[0.0], &[1.3]).unwrap();
        let b = p.density(&[0.0], &[0.7]).unwrap();
        assert!((a - b).abs() < 1e-15);
        // Hand-evaluated: N(1.5 | 1, 0.25) = exp(-0.5) / sqrt(2π·0.25).
        let v = p.density(&[0.0], &[1.5]).unwrap();
        assert!((v - (-0.5f64).exp() / (2.0 * PI * 0.25).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn multivariate_peak() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let p = GaussianOptionPolicy::constant(&[1.0, -1.0], cov.clone(), FeatureMap::linear(1))
            .unwrap();
        let v = p.density(&[5.0], &[1.0, -1.0]).unwrap();
        let expect = 1.0 / (2.0 * PI * cov.determinant().sqrt());
        assert!((v - expect).abs() < 1e-14);
    }

    #[test]
    fn degenerate_covariance_samples_at_mean() {
        let p = scalar_policy(&[2.0, 1.0], 1e-8);
        let mut rng = RngStream::new(0, 0);
        for _ in 0..100 {
            let x = p.sample(&[1.0], &mut rng).unwrap()[0];
            assert!((x - 3.0).abs() < 1e-3);
        }
    }

    #[test]
    fn sample_mean_law_of_large_numbers() {
        let p = scalar_policy(&[2.0, 1.0], 0.5);
        let mut rng = RngStream::new(9, 1);
        let n = 100_000;
        let m = (0..n)
            .map(|_| p.sample(&[1.0], &mut rng).unwrap()[0])
            .sum::<f64>()
            / n as f64;
        assert!((m - 3.0).abs() < 3.0 * 0.5f64.sqrt() / (n as f64).sqrt());
    }

    #[test]
    fn fixed_seed_reproduces_draws() {
        let p = scalar_policy(&[2.0, 1.0], 0.5);
        let mut a = RngStream::new(4, 4);
        let mut b = RngStream::new(4, 4);
        for _ in 0..50 {
            assert_eq!(
                p.sample(&[0.2], &mut a).unwrap(),
                p.sample(&[0.2], &mut b).unwrap()
            );
        }
    }

    #[test]
    fn covariance_is_floored() {
        let p = scalar_policy(&[0.0, 0.0], 0.0);
        assert!(p.covariance()[(0, 0)] >= COV_FLOOR);
    }
}
