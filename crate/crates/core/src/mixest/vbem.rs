use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use super::init::{hard_assign, weighted_kmeans_pp};
use super::{MixturePriors, WeightedMixtureState};
use crate::error::{Error, Result};
use crate::linalg::{self, cholesky, log_sum_exp};
use crate::rng::RngStream;

/// Variational posterior of one component:
/// `Dir(α̂) · N(μ | ĥ, (β̂ S)⁻¹) · W(S | K̂, ν̂)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPosterior {
    pub alpha: f64,
    pub beta: f64,
    pub h: DVector<f64>,
    pub nu: f64,
    pub k: DMatrix<f64>,
}

impl ClusterPosterior {
    pub fn prior(p: &MixturePriors) -> Self {
        Self {
            alpha: p.alpha0,
            beta: p.beta0,
            h: DVector::zeros(p.dim()),
            nu: p.nu0,
            k: p.k0.clone(),
        }
    }

    /// Posterior-mean precision `ν̂ K̂`.
    pub fn expected_precision(&self) -> DMatrix<f64> {
        &self.k * self.nu
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VbemOptions {
    pub m_max: usize,
    /// Stop when `max |Δη̂| < tol`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for VbemOptions {
    fn default() -> Self {
        Self {
            m_max: 10,
            tol: 1e-5,
            max_iter: 300,
        }
    }
}

/// Responsibilities `η̂_{iℓ} ∝ ρ̂_{iℓ}` with
/// `log ρ̂ = ψ(α̂_ℓ) − ψ(Σα̂) + ½ Σ_j ψ((ν̂_ℓ+1−j)/2) + ½ log|K̂_ℓ| − d/(2β̂_ℓ)
///          − (ν̂_ℓ/2)(x − ĥ_ℓ)ᵀ K̂_ℓ (x − ĥ_ℓ)`.
pub fn vb_e_step(points: &DMatrix<f64>, clusters: &[ClusterPosterior]) -> Result<DMatrix<f64>> {
    let (n, d) = points.shape();
    let m = clusters.len();
    if m == 0 {
        return Err(Error::invalid("no clusters"));
    }
    let alpha_sum: f64 = clusters.iter().map(|c| c.alpha).sum();
    let psi_sum = digamma(alpha_sum);
    let mut consts = Vec::with_capacity(m);
    let mut factors = Vec::with_capacity(m);
    for (l, c) in clusters.iter().enumerate() {
        if c.h.len() != d || c.k.shape() != (d, d) {
            return Err(Error::invalid(format!(
                "cluster {l} has dimension mismatch"
            )));
        }
        let chol = cholesky(&c.k, &format!("VB-E: K̂ of cluster {l}"))?;
        let log_det = linalg::log_det_chol(&chol);
        let psi_nu: f64 = (1..=d)
            .map(|j| digamma((c.nu + 1.0 - j as f64) / 2.0))
            .sum();
        consts.push(
            digamma(c.alpha) - psi_sum + 0.5 * psi_nu + 0.5 * log_det - d as f64 / (2.0 * c.beta),
        );
        // (x−h)ᵀK(x−h) = ‖Lᵀ(x−h)‖² with K = L Lᵀ.
        factors.push(chol.l().transpose());
    }
    let mut resp = DMatrix::zeros(n, m);
    let mut logs = vec![0.0; m];
    let mut diff = DVector::zeros(d);
    for i in 0..n {
        for (l, c) in clusters.iter().enumerate() {
            for j in 0..d {
                diff[j] = points[(i, j)] - c.h[j];
            }
            let lt = &factors[l];
            let mut q = 0.0;
            for r in 0..d {
                let mut acc = 0.0;
                for k in r..d {
                    acc += lt[(r, k)] * diff[k];
                }
                q += acc * acc;
            }
            logs[l] = consts[l] - 0.5 * c.nu * q;
        }
        let lse = log_sum_exp(&logs);
        for l in 0..m {
            resp[(i, l)] = (logs[l] - lse).exp();
        }
    }
    Ok(resp)
}

/// Weighted VB-M: closed-form posterior updates from responsibilities and
/// per-sample weights. A component with zero weighted mass reverts to the
/// prior.
pub fn vb_m_step(
    points: &DMatrix<f64>,
    weights: &[f64],
    responsibilities: &DMatrix<f64>,
    priors: &MixturePriors,
) -> Result<WeightedMixtureState> {
    let (n, d) = points.shape();
    if weights.len() != n || responsibilities.nrows() != n {
        return Err(Error::invalid(
            "points, weights and responsibilities disagree on n",
        ));
    }
    if d != priors.dim() {
        return Err(Error::invalid(
            "prior dimension differs from data dimension",
        ));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid("weights must be finite and non-negative"));
    }
    let m = responsibilities.ncols();
    let k0_inv = cholesky(&priors.k0, "prior K0")?.inverse();
    let mut clusters = Vec::with_capacity(m);
    let mut gamma = Vec::with_capacity(m);
    for l in 0..m {
        let mut g = 0.0;
        let mut sum = DVector::zeros(d);
        for i in 0..n {
            let wr = weights[i] * responsibilities[(i, l)];
            g += wr;
            for j in 0..d {
                sum[j] += wr * points[(i, j)];
            }
        }
        gamma.push(g);
        if g <= 0.0 {
            clusters.push(ClusterPosterior::prior(priors));
            continue;
        }
        let c = sum / g;
        let mut scatter = k0_inv.clone();
        for i in 0..n {
            let wr = weights[i] * responsibilities[(i, l)];
            if wr == 0.0 {
                continue;
            }
            for a in 0..d {
                let da = points[(i, a)] - c[a];
                for b in a..d {
                    scatter[(a, b)] += wr * da * (points[(i, b)] - c[b]);
                }
            }
        }
        let shrink = priors.beta0 * g / (priors.beta0 + g);
        for a in 0..d {
            for b in a..d {
                scatter[(a, b)] += shrink * c[a] * c[b];
                scatter[(b, a)] = scatter[(a, b)];
            }
        }
        let mut k = cholesky(&scatter, &format!("VB-M: K̂⁻¹ of cluster {l}"))?.inverse();
        linalg::symmetrize(&mut k);
        let beta = priors.beta0 + g;
        clusters.push(ClusterPosterior {
            alpha: priors.alpha0 + g,
            beta,
            h: &c * (g / beta),
            nu: priors.nu0 + g,
            k,
        });
    }
    Ok(WeightedMixtureState {
        clusters,
        responsibilities: responsibilities.clone(),
        gamma,
        converged: false,
        iterations: 0,
    })
}

/// Importance-weighted VBEM from a weighted k-means++ start.
///
/// Returns the last state, flagged non-converged, if `max_iter` is reached.
pub fn fit_weighted_vbem(
    points: &DMatrix<f64>,
    weights: &[f64],
    priors: &MixturePriors,
    opts: &VbemOptions,
    rng: &mut RngStream,
) -> Result<WeightedMixtureState> {
    let n = points.nrows();
    if n == 0 {
        return Err(Error::invalid("no points"));
    }
    if opts.m_max == 0 {
        return Err(Error::invalid("m_max must be at least 1"));
    }
    if weights.len() != n {
        return Err(Error::invalid("one weight per point required"));
    }
    let centers = weighted_kmeans_pp(points, weights, opts.m_max, rng);
    let mut resp = hard_assign(points, &centers);
    let mut state = vb_m_step(points, weights, &resp, priors)?;
    for it in 1..=opts.max_iter {
        let next = vb_e_step(points, &state.clusters)?;
        let delta = (&next - &resp).amax();
        resp = next;
        state = vb_m_step(points, weights, &resp, priors)?;
        state.iterations = it;
        if delta < opts.tol {
            state.converged = true;
            return Ok(state);
        }
    }
    log::warn!(
        "weighted VBEM did not converge in {} iterations",
        opts.max_iter
    );
    Ok(state)
}
