use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    /// Isotropic length scale `l`.
    pub length: f64,
    pub sigma_f: f64,
    pub sigma_n: f64,
}

impl GpHyper {
    pub fn new(length: f64, sigma_f: f64, sigma_n: f64) -> Result<Self> {
        let h = Self {
            length,
            sigma_f,
            sigma_n,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("length", self.length),
            ("sigma_f", self.sigma_f),
            ("sigma_n", self.sigma_n),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!(
                    "GP {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// `[ln l, ln σ_f, ln σ_n]`, the coordinates of the likelihood gradient.
    pub fn to_log(self) -> [f64; 3] {
        [self.length.ln(), self.sigma_f.ln(), self.sigma_n.ln()]
    }

    pub fn from_log(v: [f64; 3]) -> Self {
        Self {
            length: v[0].exp(),
            sigma_f: v[1].exp(),
            sigma_n: v[2].exp(),
        }
    }
}

/// `σ_f² exp(−‖a−b‖² / 2l²) + σ_n² δ`, where `same_index` marks a
/// training-set diagonal entry.
pub fn se_kernel(a: &[f64], b: &[f64], hyper: &GpHyper, same_index: bool) -> f64 {
    let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let mut k = hyper.sigma_f * hyper.sigma_f * (-r2 / (2.0 * hyper.length * hyper.length)).exp();
    if same_index {
        k += hyper.sigma_n * hyper.sigma_n;
    }
    k
}

/// Per-dimension affine standardization of GP inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaler {
    pub fn fit(inputs: &DMatrix<f64>) -> Self {
        let (n, d) = inputs.shape();
        let mut mean = vec![0.0; d];
        let mut scale = vec![1.0; d];
        for j in 0..d {
            let col = inputs.column(j);
            let m = col.sum() / n.max(1) as f64;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n.max(1) as f64;
            mean[j] = m;
            scale[j] = if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 };
        }
        Self { mean, scale }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn apply_rows(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| {
            (z[(i, j)] - self.mean[j]) / self.scale[j]
        })
    }

    pub fn apply_cov(&self, cov: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(cov.nrows(), cov.ncols(), |i, j| {
            cov[(i, j)] / (self.scale[i] * self.scale[j])
        })
    }
}

/// Constant the GP reverts to away from data. `Min` makes unexplored
/// regions look no better than the worst observed return.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMean {
    #[default]
    Mean,
    Min,
}

/// Quantities only needed for uncertain-input variances, built on demand.
#[derive(Debug, Clone)]
pub(crate) struct VarianceCache {
    /// `(K⁻¹ − ααᵀ)_ij · exp(−‖z_i − z_j‖² / 4l²)`.
    pub(crate) weighted_pairs: DMatrix<f64>,
}

/// A fitted GP over (optionally standardized) inputs with a constant mean.
#[derive(Debug, Clone)]
pub struct GpReturnModel {
    pub(crate) inputs: DMatrix<f64>,
    targets: Vec<f64>,
    pub(crate) mean_offset: f64,
    pub(crate) hyper: GpHyper,
    pub(crate) scaler: InputScaler,
    chol: Cholesky<f64, Dyn>,
    pub(crate) alpha: DVector<f64>,
    pub(crate) variance_cache: OnceLock<VarianceCache>,
}

impl GpReturnModel {
    /// Fits on raw inputs (no standardization).
    pub fn fit(inputs: &DMatrix<f64>, targets: &[f64], hyper: GpHyper) -> Result<Self> {
        Self::fit_scaled(
            inputs,
            targets,
            hyper,
            InputScaler::identity(inputs.ncols()),
        )
    }

    /// Fits on `scaler`-transformed inputs; predictions take raw inputs.
    pub fn fit_scaled(
        inputs: &DMatrix<f64>,
        targets: &[f64],
        hyper: GpHyper,
        scaler: InputScaler,
    ) -> Result<Self> {
        Self::fit_with_prior(inputs, targets, hyper, scaler, PriorMean::Mean)
    }

    pub fn fit_with_prior(
        inputs: &DMatrix<f64>,
        targets: &[f64],
        hyper: GpHyper,
        scaler: InputScaler,
        prior: PriorMean,
    ) -> Result<Self> {
        hyper.validate()?;
        let n = inputs.nrows();
        if n == 0 || targets.len() != n {
            return Err(Error::invalid(
                "GP needs at least one input and one target per input",
            ));
        }
        if scaler.mean.len() != inputs.ncols() {
            return Err(Error::invalid(
                "scaler dimension differs from input dimension",
            ));
        }
        if targets.iter().any(|t| !t.is_finite()) || inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite GP training data"));
        }
        let z = scaler.apply_rows(inputs);
        let mean_offset = match prior {
            PriorMean::Mean => targets.iter().sum::<f64>() / n as f64,
            PriorMean::Min => targets.iter().copied().fold(f64::INFINITY, f64::min),
        };
        let y = DVector::from_iterator(n, targets.iter().map(|t| t - mean_offset));
        let k = kernel_matrix(&z, &hyper);
        let (chol, _) = linalg::cholesky_jittered(&k, 1e-10, 1e-6, "GP kernel matrix")?;
        let alpha = chol.solve(&y);
        Ok(Self {
            inputs: z,
            targets: targets.to_vec(),
            mean_offset,
            hyper,
            scaler,
            chol,
            alpha,
            variance_cache: OnceLock::new(),
        })
    }

    pub fn hyper(&self) -> GpHyper {
        self.hyper
    }

    pub fn scaler(&self) -> &InputScaler {
        &self.scaler
    }

    pub fn mean_offset(&self) -> f64 {
        self.mean_offset
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Training inputs in raw (unscaled) coordinates.
    pub fn raw_inputs(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.inputs.nrows(), self.inputs.ncols(), |i, j| {
            self.inputs[(i, j)] * self.scaler.scale[j] + self.scaler.mean[j]
        })
    }

    pub(crate) fn kinv(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// Posterior mean and latent-function variance at a raw input.
    pub fn predict(&self, z: &[f64]) -> Result<(f64, f64)> {
        if z.len() != self.dim() {
            return Err(Error::invalid("GP input dimension mismatch"));
        }
        let zs = self.scaler.apply(z);
        let n = self.len();
        let mut kvec = DVector::zeros(n);
        for i in 0..n {
            kvec[i] = se_kernel(
                self.inputs.row(i).transpose().as_slice(),
                &zs,
                &self.hyper,
                false,
            );
        }
        let mean = self.mean_offset + kvec.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kvec)
            .ok_or_else(|| Error::numerical("GP predict", "triangular solve failed"))?;
        let mut var = self.hyper.sigma_f * self.hyper.sigma_f - v.norm_squared();
        if var < 0.0 {
            if var < -1e-10 {
                log::debug!("GP predictive variance {var:e} clamped to 0");
            }
            var = 0.0;
        }
        Ok((mean, var))
    }
}

pub(crate) fn kernel_matrix(z: &DMatrix<f64>, hyper: &GpHyper) -> DMatrix<f64> {
    let n = z.nrows();
    let sf2 = hyper.sigma_f * hyper.sigma_f;
    let inv2l2 = 1.0 / (2.0 * hyper.length * hyper.length);
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = sf2 + hyper.sigma_n * hyper.sigma_n;
        for j in 0..i {
            let mut r2 = 0.0;
            for c in 0..z.ncols() {
                let d = z[(i, c)] - z[(j, c)];
                r2 += d * d;
            }
            let v = sf2 * (-r2 * inv2l2).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn h(l: f64, sf: f64, sn: f64) -> GpHyper {
        GpHyper::new(l, sf, sn).unwrap()
    }

    #[test]
    fn kernel_examples() {
        let hy = h(0.7, 1.3, 0.2);
        let a = [0.1, -0.4];
        assert!((se_kernel(&a, &a, &hy, true) - (1.69 + 0.04)).abs() < 1e-14);
        let b = [0.1 + 0.7, -0.4];
        assert!((se_kernel(&a, &b, &hy, false) - 1.69 * (-0.5f64).exp()).abs() < 1e-14);
        assert_eq!(se_kernel(&a, &b, &hy, false), se_kernel(&b, &a, &hy, false));
    }

    #[test]
    fn single_point_interpolates() {
        let z = DMatrix::from_row_slice(1, 2, &[0.3, 0.4]);
        let gp = GpReturnModel::fit(&z, &[2.5], h(1.0, 1.0, 1e-6)).unwrap();
        let (m, _) = gp.predict(&[0.3, 0.4]).unwrap();
        assert!((m - 2.5).abs() < 1e-4);
    }

    #[test]
    fn far_point_reverts_to_prior() {
        let z = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let y = [1.0, 3.0, 2.0];
        let gp = GpReturnModel::fit(&z, &y, h(0.5, 1.5, 0.1)).unwrap();
        let (m, v) = gp.predict(&[100.0]).unwrap();
        assert!((m - 2.0).abs() < 1e-12);
        assert!((v - 2.25).abs() < 1e-12);
    }

    #[test]
    fn five_point_dense_solve_oracle() {
        let xs = [-1.0, -0.3, 0.2, 0.9, 1.5];
        let ys = [0.5, -0.2, 0.1, 1.2, 0.8];
        let hy = h(0.6, 1.1, 0.05);
        let z = DMatrix::from_column_slice(5, 1, &xs);
        let gp = GpReturnModel::fit(&z, &ys, hy).unwrap();
        // Oracle: explicit LU solve of (K + σ_n² I) α = y − ȳ.
        let ybar = ys.iter().sum::<f64>() / 5.0;
        let k = DMatrix::from_fn(5, 5, |i, j| se_kernel(&[xs[i]], &[xs[j]], &hy, i == j));
        let yc = DVector::from_iterator(5, ys.iter().map(|v| v - ybar));
        let alpha = k.clone().lu().solve(&yc).unwrap();
        let kinv = k.try_inverse().unwrap();
        for t in [-2.0, -0.5, 0.0, 0.4, 1.0, 3.0] {
            let kv =
                DVector::from_iterator(5, xs.iter().map(|x| se_kernel(&[*x], &[t], &hy, false)));
            let mean = ybar + kv.dot(&alpha);
            let var = 1.21 - (kv.transpose() * &kinv * &kv)[(0, 0)];
            let (m, v) = gp.predict(&[t]).unwrap();
            assert!((m - mean).abs() < 1e-10);
            assert!((v - var.max(0.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn variance_non_negative() {
        let mut rng = RngStream::new(2, 0);
        let z = DMatrix::from_fn(40, 2, |_, _| rng.uniform_range(-1.0, 1.0));
        let y: Vec<f64> = (0..40).map(|i| z[(i, 0)].sin() + z[(i, 1)]).collect();
        let gp =
            GpReturnModel::fit_scaled(&z, &y, h(0.3, 1.0, 1e-4), InputScaler::fit(&z)).unwrap();
        for _ in 0..500 {
            let p = [rng.uniform_range(-2.0, 2.0), rng.uniform_range(-2.0, 2.0)];
            assert!(gp.predict(&p).unwrap().1 >= 0.0);
        }
        let back = gp.raw_inputs();
        assert!((back - z).amax() < 1e-12);
    }

    #[test]
    fn duplicated_inputs_need_noise_only() {
        let z = DMatrix::from_row_slice(2, 1, &[0.5, 0.5]);
        let gp = GpReturnModel::fit(&z, &[1.0, 3.0], h(1.0, 1.0, 0.1)).unwrap();
        let (m, _) = gp.predict(&[0.5]).unwrap();
        assert!((m - 2.0).abs() < 1e-2);
    }

    #[test]
    fn rejects_bad_hyper() {
        assert!(GpHyper::new(0.0, 1.0, 1.0).is_err());
        assert!(GpHyper::new(1.0, f64::NAN, 1.0).is_err());
    }
}
