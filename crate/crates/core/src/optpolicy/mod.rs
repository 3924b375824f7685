//! Gaussian option policies and their episodic updates.
//!
//! An option policy is `π(ξ | s, o) = N(ξ | W_oᵀ φ(s), Σ_o)`. Updates are
//! weighted maximum-likelihood fits ([`erwr_update`]) with sample weights
//! coming either from a return transform (RWR) or from the episodic REPS
//! dual ([`reps_weights`]).

mod erwr;
mod policy;
mod reps;

pub use erwr::{erwr_update, Ridge};
pub use policy::{GaussianOptionPolicy, COV_FLOOR};
pub use reps::{reps_dual, reps_weights, RepsSolution, ETA_MAX, ETA_MIN};

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::Result;
use crate::features::FeatureMap;
use crate::weighting::ReturnTransform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UpdateMethod {
    Rwr,
    Reps { epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateParams {
    /// Return transform used by the RWR path.
    pub transform: ReturnTransform,
    pub ridge: Ridge,
    /// Weight on the previous covariance when an option is sample-starved.
    pub shrinkage: f64,
}

impl Default for UpdateParams {
    fn default() -> Self {
        Self {
            transform: ReturnTransform::default(),
            ridge: Ridge::default(),
            shrinkage: 1e-2,
        }
    }
}

/// Refits one option policy from the samples assigned to it.
///
/// With fewer than `d_ξ + 1` samples the previous policy is returned
/// unchanged. When fewer than `3·d_ξ` samples are available the fitted
/// covariance is blended with the previous one.
pub fn update_option_policy(
    samples: &[&Sample],
    method: UpdateMethod,
    params: &UpdateParams,
    fmap: &FeatureMap,
    previous: Option<&GaussianOptionPolicy>,
) -> Result<GaussianOptionPolicy> {
    let param_dim = samples
        .first()
        .map(|s| s.traj_param.len())
        .or_else(|| previous.map(|p| p.param_dim()))
        .unwrap_or(0);
    if samples.len() < param_dim + 1 {
        if let Some(prev) = previous {
            log::debug!(
                "option has {} samples (< {}), keeping previous policy",
                samples.len(),
                param_dim + 1
            );
            return Ok(prev.clone());
        }
        if samples.is_empty() {
            return Err(crate::Error::invalid("no samples and no previous policy"));
        }
    }
    let returns: Vec<f64> = samples.iter().map(|s| s.ret).collect();
    let weights = match method {
        UpdateMethod::Rwr => params.transform.apply_all(&returns)?,
        UpdateMethod::Reps { epsilon } => reps_weights(&returns, epsilon)?.weights,
    };
    let contexts: Vec<&[f64]> = samples.iter().map(|s| s.context.as_slice()).collect();
    let params_xi: Vec<&[f64]> = samples.iter().map(|s| s.traj_param.as_slice()).collect();
    let mut fitted = erwr_update(&contexts, &params_xi, &weights, fmap, params.ridge)?;
    if let Some(prev) = previous {
        if samples.len() < 3 * param_dim && prev.param_dim() == param_dim {
            let c = params.shrinkage;
            let blended = fitted.covariance() * (1.0 - c) + prev.covariance() * c;
            fitted = fitted.with_covariance(blended)?;
        }
    }
    Ok(fitted)
}
