//! Mixture estimation over joint points `x = [s; ξ]`.
//!
//! [`fit_weighted_vbem`] is the variational-Bayes EM with per-sample
//! importance weights entering the VB-M sufficient statistics. The weighted
//! maximum-likelihood EM in [`ml_em_oracle`] serves as a cross-check.
//! Components whose weighted mass falls below a threshold are dropped by
//! [`prune_clusters`]; the survivors become option policies.

mod em;
mod init;
mod vbem;

pub use em::{ml_em_oracle, EmFit, GaussianMixture};
pub use init::weighted_kmeans_pp;
pub use vbem::{fit_weighted_vbem, vb_e_step, vb_m_step, ClusterPosterior, VbemOptions};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dirichlet / Gaussian-Wishart prior hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePriors {
    pub alpha0: f64,
    pub beta0: f64,
    pub nu0: f64,
    /// Wishart scale matrix `K₀` (d × d, SPD).
    pub k0: DMatrix<f64>,
}

impl MixturePriors {
    pub fn new(alpha0: f64, beta0: f64, nu0: f64, k0: DMatrix<f64>) -> Result<Self> {
        let d = k0.nrows();
        if k0.ncols() != d || d == 0 {
            return Err(Error::invalid("K0 must be square and non-empty"));
        }
        if !(alpha0 > 0.0) || !(beta0 > 0.0) {
            return Err(Error::invalid("alpha0 and beta0 must be positive"));
        }
        if !(nu0 > d as f64 - 1.0) {
            return Err(Error::invalid(format!(
                "nu0 = {nu0} must exceed d - 1 = {}",
                d - 1
            )));
        }
        crate::linalg::cholesky(&k0, "prior K0")?;
        Ok(Self {
            alpha0,
            beta0,
            nu0,
            k0,
        })
    }

    /// `α₀ = alpha0`, `β₀ = 1`, `ν₀ = d + 2`, `K₀ = I / scale` where `scale`
    /// is the mean per-dimension weighted variance of the data.
    pub fn from_data(points: &DMatrix<f64>, weights: &[f64], alpha0: f64) -> Result<Self> {
        let d = points.ncols();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("weights sum to zero"));
        }
        let mut mean = DVector::zeros(d);
        for (i, w) in weights.iter().enumerate() {
            mean += points.row(i).transpose() * *w;
        }
        mean /= total;
        let mut var = 0.0;
        for (i, w) in weights.iter().enumerate() {
            var += w * (points.row(i).transpose() - &mean).norm_squared();
        }
        let scale = (var / total / d as f64).max(1e-12);
        Self::new(alpha0, 1.0, d as f64 + 2.0, DMatrix::identity(d, d) / scale)
    }

    pub fn dim(&self) -> usize {
        self.k0.nrows()
    }
}

/// Posterior over mixture parameters together with the responsibilities it
/// was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMixtureState {
    pub clusters: Vec<ClusterPosterior>,
    /// `n × m`, rows sum to one.
    pub responsibilities: DMatrix<f64>,
    /// `γ̂_ℓ = Σ_i w_i η̂_{iℓ}`.
    pub gamma: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl WeightedMixtureState {
    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }
}

/// `o_i = argmax_ℓ η̂_{iℓ}`, ties to the lowest index.
pub fn assign_options(state: &WeightedMixtureState) -> Vec<usize> {
    let all: Vec<usize> = (0..state.n_clusters()).collect();
    assign_among(&state.responsibilities, &all)
}

/// Argmax restricted to the listed clusters; returns positions into `among`.
pub fn assign_among(responsibilities: &DMatrix<f64>, among: &[usize]) -> Vec<usize> {
    (0..responsibilities.nrows())
        .map(|i| {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (k, &l) in among.iter().enumerate() {
                let v = responsibilities[(i, l)];
                if v > best_v {
                    best_v = v;
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Clusters holding at least `min_rel_mass` of the total weighted mass, in
/// index order. The heaviest cluster always survives.
pub fn prune_clusters(state: &WeightedMixtureState, min_rel_mass: f64) -> Vec<usize> {
    let total: f64 = state.gamma.iter().sum();
    let heaviest = state
        .gamma
        .iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &g)| if g > acc.1 { (i, g) } else { acc },
        )
        .0;
    (0..state.gamma.len())
        .filter(|&l| l == heaviest || (total > 0.0 && state.gamma[l] / total >= min_rel_mass))
        .collect()
}
