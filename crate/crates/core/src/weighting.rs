//! Return transforms `f(R)` and the normalized return-weighted importance
//! `W̃_i ∝ f(R_i) / π_old(ξ_i | s_i)`.
//!
//! The partition function of the return-induced target density cancels in
//! the normalization, so it is never formed. Exponential transforms are
//! evaluated as `exp(β (R_i − max_j R_j))` for the same reason.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;
use crate::optpolicy::GaussianOptionPolicy;

/// Offset added by the shifted-identity transform.
pub const SHIFT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReturnTransform {
    /// `f(R) = exp(β R)`.
    Exponential { beta: f64 },
    /// `f(R) = R − min_j R_j + ε` over the batch being weighted.
    ShiftedIdentity,
    /// `f(R) = R`; only defined for strictly positive returns.
    Identity,
}

impl Default for ReturnTransform {
    fn default() -> Self {
        ReturnTransform::Exponential { beta: 1.0 }
    }
}

impl ReturnTransform {
    /// `log f(R_i)` for a batch, up to a common additive constant.
    pub fn log_apply_all(&self, returns: &[f64]) -> Result<Vec<f64>> {
        if returns.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("non-finite return"));
        }
        match *self {
            ReturnTransform::Exponential { beta } => {
                if !(beta > 0.0) {
                    return Err(Error::invalid("exponential transform needs beta > 0"));
                }
                let r_max = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Ok(returns.iter().map(|r| beta * (r - r_max)).collect())
            }
            ReturnTransform::ShiftedIdentity => {
                let r_min = returns.iter().copied().fold(f64::INFINITY, f64::min);
                Ok(returns
                    .iter()
                    .map(|r| (r - r_min + SHIFT_EPS).ln())
                    .collect())
            }
            ReturnTransform::Identity => {
                if returns.iter().any(|&r| r <= 0.0) {
                    return Err(Error::invalid("identity transform needs positive returns"));
                }
                Ok(returns.iter().map(|r| r.ln()).collect())
            }
        }
    }

    /// `f(R_i)` for a batch, up to a common positive factor.
    pub fn apply_all(&self, returns: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .log_apply_all(returns)?
            .into_iter()
            .map(f64::exp)
            .collect())
    }
}

/// `f(R)` for a single return, without batch shifting.
pub fn transform_return(r: f64, t: &ReturnTransform) -> Result<f64> {
    if !r.is_finite() {
        return Err(Error::invalid("non-finite return"));
    }
    let v = match *t {
        ReturnTransform::Exponential { beta } => (beta * r).exp(),
        ReturnTransform::ShiftedIdentity => SHIFT_EPS,
        ReturnTransform::Identity => {
            if r <= 0.0 {
                return Err(Error::invalid("identity transform needs positive returns"));
            }
            r
        }
    };
    if !v.is_finite() || v <= 0.0 {
        return Err(Error::numerical(
            "transform_return",
            format!("f({r}) is not representable; weight batches instead"),
        ));
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceWeights {
    /// `f(R_i)/π_old_i` up to a common factor (largest entry is 1).
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl ImportanceWeights {
    /// Kish effective sample size `1 / Σ W̃_i²`.
    pub fn ess(&self) -> f64 {
        1.0 / self.normalized.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Normalized weights from returns and log behavior densities.
pub fn importance_weights_log(
    returns: &[f64],
    old_log_densities: &[f64],
    t: &ReturnTransform,
) -> Result<ImportanceWeights> {
    if returns.len() != old_log_densities.len() {
        return Err(Error::invalid(format!(
            "{} returns but {} densities",
            returns.len(),
            old_log_densities.len()
        )));
    }
    if returns.is_empty() {
        return Err(Error::invalid("cannot weight an empty dataset"));
    }
    if old_log_densities
        .iter()
        .any(|d| d.is_nan() || *d == f64::INFINITY || *d == f64::NEG_INFINITY)
    {
        return Err(Error::invalid(
            "behavior densities must be positive and finite",
        ));
    }
    let log_f = t.log_apply_all(returns)?;
    let log_raw: Vec<f64> = log_f
        .iter()
        .zip(old_log_densities)
        .map(|(lf, ld)| lf - ld)
        .collect();
    let lse = log_sum_exp(&log_raw);
    let top = log_raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ImportanceWeights {
        raw: log_raw.iter().map(|l| (l - top).exp()).collect(),
        normalized: log_raw.iter().map(|l| (l - lse).exp()).collect(),
    })
}

pub fn importance_weights(
    ds: &Dataset,
    old_densities: &[f64],
    t: &ReturnTransform,
) -> Result<ImportanceWeights> {
    if old_densities.len() != ds.len() {
        return Err(Error::invalid(format!(
            "{} samples but {} densities",
            ds.len(),
            old_densities.len()
        )));
    }
    if let Some(i) = old_densities
        .iter()
        .position(|d| !(*d > 0.0) || !d.is_finite())
    {
        return Err(Error::invalid(format!(
            "behavior density of sample {i} is {} (must be positive)",
            old_densities[i]
        )));
    }
    let logs: Vec<f64> = old_densities.iter().map(|d| d.ln()).collect();
    importance_weights_log(&ds.returns(), &logs, t)
}

/// `log Σ_o p_o N(ξ | W_oᵀφ(s), Σ_o)`.
pub fn mixture_old_log_density(
    policies: &[GaussianOptionPolicy],
    gate_probs: &[f64],
    s: &[f64],
    xi: &[f64],
) -> Result<f64> {
    if policies.len() != gate_probs.len() || policies.is_empty() {
        return Err(Error::invalid("one gate probability per policy required"));
    }
    let total: f64 = gate_probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 || gate_probs.iter().any(|p| *p < 0.0) {
        return Err(Error::invalid(format!("gate probabilities sum to {total}")));
    }
    let mut terms = Vec::with_capacity(policies.len());
    for (o, (p, g)) in policies.iter().zip(gate_probs).enumerate() {
        if *g == 0.0 {
            continue;
        }
        let ld = p.log_density(s, xi).map_err(|e| match e {
            Error::Numerical { detail, .. } => {
                Error::numerical(format!("option {o} density"), detail)
            }
            other => other,
        })?;
        terms.push(g.ln() + ld);
    }
    Ok(log_sum_exp(&terms))
}

pub fn mixture_old_density(
    policies: &[GaussianOptionPolicy],
    gate_probs: &[f64],
    s: &[f64],
    xi: &[f64],
) -> Result<f64> {
    Ok(mixture_old_log_density(policies, gate_probs, s, xi)?.exp())
}

/// Lower bound on `log J(π)` with `J(π) = Σ_i m_i π(ξ_i|s_i) f_i / π_old_i`.
///
/// `m_i` is the probability of sample `i` under the behavior distribution:
/// the exact mass for an enumerated instance, or `1/n` for `n` draws (then
/// `J` is the importance-sampled estimate). By Jensen, `log J(π) ≥ log Z +
/// Σ_i W̃_i log π(ξ_i|s_i)` with `Z = Σ_i m_i f_i / π_old_i` and `W̃` the
/// normalized weights, so raising the weighted log-likelihood raises the
/// bound. Equality holds when `π(ξ_i|s_i)` is constant over the support.
pub fn return_lower_bound(
    masses: &[f64],
    f_values: &[f64],
    old_densities: &[f64],
    new_log_densities: &[f64],
) -> Result<f64> {
    let n = masses.len();
    if f_values.len() != n || old_densities.len() != n || new_log_densities.len() != n || n == 0 {
        return Err(Error::invalid(
            "lower bound needs equal-length, non-empty inputs",
        ));
    }
    if masses.iter().any(|m| !(*m >= 0.0) || !m.is_finite())
        || f_values.iter().any(|f| !(*f > 0.0) || !f.is_finite())
        || old_densities.iter().any(|d| !(*d > 0.0) || !d.is_finite())
    {
        return Err(Error::invalid(
            "masses must be ≥ 0, f(R) and behavior densities positive",
        ));
    }
    let log_terms: Vec<f64> = (0..n)
        .map(|i| masses[i].ln() + f_values[i].ln() - old_densities[i].ln())
        .collect();
    let log_z = log_sum_exp(&log_terms);
    if !log_z.is_finite() {
        return Err(Error::invalid("all masses are zero"));
    }
    let mut ll = 0.0;
    for (lt, lp) in log_terms.iter().zip(new_log_densities) {
        let w = (lt - log_z).exp();
        if w > 0.0 {
            ll += w * lp;
        }
    }
    Ok(log_z + ll)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use crate::features::FeatureMap;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Random categorical rows over `k` outcomes.
    fn random_rows(rng: &mut crate::rng::RngStream, rows: usize, k: usize) -> Vec<Vec<f64>> {
        (0..rows)
            .map(|_| {
                let r: Vec<f64> = (0..k).map(|_| rng.uniform_range(0.01, 1.0)).collect();
                let z: f64 = r.iter().sum();
                r.into_iter().map(|v| v / z).collect()
            })
            .collect()
    }

    #[test]
    fn lower_bound_holds_on_enumerated_instance() {
        // Two contexts, three trajectory values, f(R) = R > 0.
        let mut rng = crate::rng::RngStream::new(21, 0);
        let d = [0.3, 0.7];
        let r = [[0.5, 2.0, 1.2], [3.0, 0.1, 0.8]];
        let old = random_rows(&mut rng, 2, 3);
        let mut masses = vec![];
        let mut f = vec![];
        let mut old_d = vec![];
        for s in 0..2 {
            for t in 0..3 {
                masses.push(d[s] * old[s][t]);
                f.push(r[s][t]);
                old_d.push(old[s][t]);
            }
        }
        for _ in 0..100 {
            let pi = random_rows(&mut rng, 2, 3);
            // Direct enumeration of the expected return.
            let mut j = 0.0;
            for s in 0..2 {
                for t in 0..3 {
                    j += d[s] * pi[s][t] * r[s][t];
                }
            }
            let new_log: Vec<f64> = pi.iter().flatten().map(|p| p.ln()).collect();
            let lb = return_lower_bound(&masses, &f, &old_d, &new_log).unwrap();
            assert!(j.ln() >= lb - 1e-10, "{} < {lb}", j.ln());
        }
        // Uniform candidate: π is constant on the support, so the bound is tight.
        let new_log = vec![(1.0f64 / 3.0).ln(); 6];
        let lb = return_lower_bound(&masses, &f, &old_d, &new_log).unwrap();
        let j: f64 = (0..2).map(|s| d[s] * r[s].iter().sum::<f64>() / 3.0).sum();
        assert!((j.ln() - lb).abs() < 1e-12);
    }

    #[test]
    fn lower_bound_rejects_bad_input() {
        assert!(return_lower_bound(&[], &[], &[], &[]).is_err());
        assert!(return_lower_bound(&[1.0], &[0.0], &[1.0], &[0.0]).is_err());
        assert!(return_lower_bound(&[0.0], &[1.0], &[1.0], &[0.0]).is_err());
        assert!(return_lower_bound(&[1.0, 1.0], &[1.0], &[1.0], &[0.0]).is_err());
    }

    fn ds(returns: &[f64]) -> Dataset {
        Dataset::new(1, 1)
            .appended(
                returns
                    .iter()
                    .map(|&r| Sample::new(vec![0.0], vec![0.0], r).unwrap())
                    .collect(),
            )
            .unwrap()
    }

    fn unit_policy(mean: f64) -> GaussianOptionPolicy {
        GaussianOptionPolicy::constant(&[mean], DMatrix::identity(1, 1), FeatureMap::linear(1))
            .unwrap()
    }

    #[test]
    fn exponential_examples() {
        let t = ReturnTransform::Exponential { beta: 1.0 };
        assert_eq!(transform_return(0.0, &t).unwrap(), 1.0);
        assert!((transform_return(2f64.ln(), &t).unwrap() - 2.0).abs() < 1e-15);
        assert!(transform_return(1e6, &t).is_err());
    }

    #[test]
    fn equal_everything_is_uniform() {
        let w = importance_weights(&ds(&[1.0; 4]), &[0.5; 4], &ReturnTransform::default()).unwrap();
        for v in &w.normalized {
            assert!((v - 0.25).abs() < 1e-15);
        }
        assert!((w.ess() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn single_sample_weight_one() {
        let w = importance_weights(&ds(&[-3.0]), &[0.1], &ReturnTransform::default()).unwrap();
        assert_eq!(w.normalized, vec![1.0]);
    }

    #[test]
    fn ln2_pair() {
        let w = importance_weights(
            &ds(&[0.0, 2f64.ln()]),
            &[1.0, 1.0],
            &ReturnTransform::default(),
        )
        .unwrap();
        assert!((w.normalized[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((w.normalized[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn bad_densities_rejected() {
        let t = ReturnTransform::default();
        assert!(importance_weights(&ds(&[0.0, 1.0]), &[1.0, 0.0], &t).is_err());
        assert!(importance_weights(&ds(&[0.0, 1.0]), &[1.0, -1.0], &t).is_err());
        assert!(importance_weights(&ds(&[0.0, 1.0]), &[1.0], &t).is_err());
    }

    #[test]
    fn huge_returns_do_not_overflow() {
        let w = importance_weights(
            &ds(&[1e5, 1e5 + 1.0]),
            &[1.0, 1.0],
            &ReturnTransform::default(),
        )
        .unwrap();
        let e = 1f64.exp();
        assert!((w.normalized[1] - e / (1.0 + e)).abs() < 1e-12);
    }

    #[test]
    fn shifted_identity_positive() {
        let t = ReturnTransform::ShiftedIdentity;
        let f = t.apply_all(&[-5.0, -2.0, 3.0]).unwrap();
        assert!((f[0] - SHIFT_EPS).abs() < 1e-18);
        assert!((f[2] - (8.0 + SHIFT_EPS)).abs() < 1e-12);
    }

    #[test]
    fn mixture_density_examples() {
        let one = unit_policy(0.0);
        let peak = mixture_old_density(std::slice::from_ref(&one), &[1.0], &[0.3], &[0.0]).unwrap();
        assert!((peak - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-15);

        let two = [unit_policy(0.0), unit_policy(0.0)];
        let v = mixture_old_density(&two, &[0.5, 0.5], &[0.3], &[0.4]).unwrap();
        let v1 = mixture_old_density(std::slice::from_ref(&one), &[1.0], &[0.3], &[0.4]).unwrap();
        assert!((v - v1).abs() < 1e-15);

        // Direct evaluation oracle.
        let sep = [unit_policy(0.0), unit_policy(10.0)];
        let v = mixture_old_density(&sep, &[0.5, 0.5], &[0.0], &[0.0]).unwrap();
        let n = |x: f64, m: f64| (-(x - m).powi(2) / 2.0).exp() / (2.0 * PI).sqrt();
        assert!((v - (0.5 * n(0.0, 0.0) + 0.5 * n(0.0, 10.0))).abs() < 1e-15);
    }

    #[test]
    fn gate_probs_must_sum_to_one() {
        let two = [unit_policy(0.0), unit_policy(1.0)];
        assert!(mixture_old_density(&two, &[0.5, 0.6], &[0.0], &[0.0]).is_err());
    }

    proptest! {
        #[test]
        fn normalized_and_scale_free(
            rs in proptest::collection::vec(-50.0f64..50.0, 1..40),
            shift in -100.0f64..100.0,
            beta in 0.01f64..5.0,
        ) {
            let dens: Vec<f64> = rs.iter().enumerate().map(|(i, _)| 0.1 + (i % 7) as f64).collect();
            let t = ReturnTransform::Exponential { beta };
            let a = importance_weights(&ds(&rs), &dens, &t).unwrap();
            let sum: f64 = a.normalized.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(a.normalized.iter().all(|w| *w >= 0.0));
            // Adding a constant to R multiplies every f(R) by the same factor.
            let shifted: Vec<f64> = rs.iter().map(|r| r + shift).collect();
            let b = importance_weights(&ds(&shifted), &dens, &t).unwrap();
            for (x, y) in a.normalized.iter().zip(&b.normalized) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn transform_monotone(a in -30.0f64..30.0, b in -30.0f64..30.0, beta in 0.01f64..3.0) {
            prop_assume!(a < b);
            let t = ReturnTransform::Exponential { beta };
            prop_assert!(transform_return(a, &t).unwrap() < transform_return(b, &t).unwrap());
        }
    }
}
