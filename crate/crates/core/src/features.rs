//! Context feature maps `φ(s)` for linear-in-features policy means.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    /// `φ(s) = [s; 1]`.
    Linear { context_dim: usize },
    /// `φ_i(s) = exp(-(s - c_i)ᵀ Λ (s - c_i))`, optionally followed by a bias 1.
    SquaredExponential {
        centers: Vec<Vec<f64>>,
        /// Diagonal of `Λ`.
        bandwidth: Vec<f64>,
        bias: bool,
    },
}

impl FeatureMap {
    pub fn linear(context_dim: usize) -> Self {
        FeatureMap::Linear { context_dim }
    }

    pub fn squared_exponential(
        centers: Vec<Vec<f64>>,
        bandwidth: Vec<f64>,
        bias: bool,
    ) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::invalid(
                "squared-exponential map needs at least one center",
            ));
        }
        let d = bandwidth.len();
        if centers.iter().any(|c| c.len() != d) {
            return Err(Error::invalid(
                "center dimension differs from bandwidth dimension",
            ));
        }
        if bandwidth.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return Err(Error::invalid(
                "bandwidth entries must be positive and finite",
            ));
        }
        Ok(FeatureMap::SquaredExponential {
            centers,
            bandwidth,
            bias,
        })
    }

    /// SE map with centers on a uniform grid over the box `lo..hi` and
    /// `Λ_jj = bandwidth_scale / spacing_j²`.
    pub fn se_grid(
        lo: &[f64],
        hi: &[f64],
        per_dim: usize,
        bandwidth_scale: f64,
        bias: bool,
    ) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::invalid(
                "grid bounds must be non-empty and equal length",
            ));
        }
        if per_dim == 0 {
            return Err(Error::invalid("grid resolution must be at least 1"));
        }
        let axes: Vec<Vec<f64>> = lo
            .iter()
            .zip(hi)
            .map(|(&a, &b)| {
                if per_dim == 1 {
                    vec![0.5 * (a + b)]
                } else {
                    (0..per_dim)
                        .map(|k| a + (b - a) * k as f64 / (per_dim - 1) as f64)
                        .collect()
                }
            })
            .collect();
        let mut centers = vec![vec![]];
        for axis in &axes {
            centers = centers
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |&v| {
                        let mut c = prefix.clone();
                        c.push(v);
                        c
                    })
                })
                .collect();
        }
        let bandwidth = lo
            .iter()
            .zip(hi)
            .map(|(&a, &b)| {
                let spacing = if per_dim > 1 {
                    (b - a) / (per_dim - 1) as f64
                } else {
                    b - a
                };
                bandwidth_scale / spacing.max(1e-12).powi(2)
            })
            .collect();
        Self::squared_exponential(centers, bandwidth, bias)
    }

    pub fn context_dim(&self) -> usize {
        match self {
            FeatureMap::Linear { context_dim } => *context_dim,
            FeatureMap::SquaredExponential { bandwidth, .. } => bandwidth.len(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            FeatureMap::Linear { context_dim } => context_dim + 1,
            FeatureMap::SquaredExponential { centers, bias, .. } => {
                centers.len() + usize::from(*bias)
            }
        }
    }

    pub fn eval(&self, s: &[f64]) -> Result<DVector<f64>> {
        match self {
            FeatureMap::Linear { context_dim } => {
                if s.len() != *context_dim {
                    return Err(Error::invalid(format!(
                        "context has dim {}, expected {context_dim}",
                        s.len()
                    )));
                }
                linear_features(s)
            }
            FeatureMap::SquaredExponential { .. } => se_features(s, self),
        }
    }
}

/// `[s; 1]`.
pub fn linear_features(s: &[f64]) -> Result<DVector<f64>> {
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite context"));
    }
    Ok(DVector::from_iterator(
        s.len() + 1,
        s.iter().copied().chain(std::iter::once(1.0)),
    ))
}

pub fn se_features(s: &[f64], map: &FeatureMap) -> Result<DVector<f64>> {
    let FeatureMap::SquaredExponential {
        centers,
        bandwidth,
        bias,
    } = map
    else {
        return Err(Error::invalid(
            "se_features called with a non-SE feature map",
        ));
    };
    if s.len() != bandwidth.len() {
        return Err(Error::invalid(format!(
            "context has dim {}, expected {}",
            s.len(),
            bandwidth.len()
        )));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite context"));
    }
    let n = centers.len() + usize::from(*bias);
    let mut out = DVector::zeros(n);
    for (i, c) in centers.iter().enumerate() {
        let q: f64 = s
            .iter()
            .zip(c)
            .zip(bandwidth)
            .map(|((a, b), l)| l * (a - b) * (a - b))
            .sum();
        out[i] = (-q).exp();
    }
    if *bias {
        out[n - 1] = 1.0;
    }
    Ok(out)
}
