//! Episodic REPS: reweight samples by `exp(R_i / η)` where the temperature
//! `η` minimizes `g(η) = ηε + η log((1/n) Σ exp(R_i / η))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ETA_MIN: f64 = 1e-6;
pub const ETA_MAX: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepsSolution {
    pub eta: f64,
    /// Normalized sample weights.
    pub weights: Vec<f64>,
    /// Achieved `Σ w_i log(n w_i)`.
    pub kl: f64,
}

/// Dual value, shifted by `max R` for stability.
pub fn reps_dual(returns: &[f64], epsilon: f64, eta: f64) -> f64 {
    let r_max = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    r_max + dual_centered(returns, r_max, epsilon, eta)
}

fn dual_centered(returns: &[f64], r_max: f64, epsilon: f64, eta: f64) -> f64 {
    let n = returns.len() as f64;
    let s: f64 = returns.iter().map(|r| ((r - r_max) / eta).exp()).sum();
    eta * epsilon + eta * (s / n).ln()
}

fn weights_at(returns: &[f64], eta: f64) -> Vec<f64> {
    let r_max = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = returns.iter().map(|r| ((r - r_max) / eta).exp()).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / z).collect()
}

fn kl_of(weights: &[f64]) -> f64 {
    let n = weights.len() as f64;
    weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| w * (n * w).ln())
        .sum::<f64>()
        .max(0.0)
}

pub fn reps_weights(returns: &[f64], epsilon: f64) -> Result<RepsSolution> {
    if returns.len() < 2 {
        return Err(Error::invalid("REPS needs at least two samples"));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::invalid("REPS bound must be positive"));
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::invalid("non-finite return"));
    }
    // g is convex with g'(η) = ε − KL(η), and KL falls monotonically in η,
    // so the minimizer is the root of KL(η) = ε. Bisecting on that root in
    // ln η resolves η to full precision and keeps the returned weights on
    // the feasible side; comparing dual values near the flat minimum would
    // only fix η to about sqrt(machine epsilon).
    let kl_at = |eta: f64| kl_of(&weights_at(returns, eta));
    let eta = if kl_at(ETA_MIN) <= epsilon {
        ETA_MIN
    } else {
        if kl_at(ETA_MAX) > epsilon {
            return Err(Error::numerical(
                "reps dual",
                format!(
                    "KL bound {epsilon} infeasible on η ∈ [{ETA_MIN:e}, {ETA_MAX:e}], KL(η_max) = {:e}",
                    kl_at(ETA_MAX)
                ),
            ));
        }
        let (mut lo, mut hi) = (ETA_MIN.ln(), ETA_MAX.ln());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if kl_at(mid.exp()) > epsilon {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 {
                break;
            }
        }
        hi.exp()
    };
    let weights = weights_at(returns, eta);
    let kl = kl_of(&weights);
    Ok(RepsSolution { eta, weights, kl })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn constant_returns_uniform() {
        for eps in [1e-3, 0.5, 5.0] {
            let sol = reps_weights(&[2.0; 7], eps).unwrap();
            for w in &sol.weights {
                assert!((w - 1.0 / 7.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn tiny_bound_nearly_uniform() {
        let r = [0.0, 1.0, -3.0, 2.5, 0.3];
        let sol = reps_weights(&r, 1e-6).unwrap();
        for w in &sol.weights {
            assert!((w - 0.2).abs() < 1e-3);
        }
    }

    /// Dense log-grid minimization of the dual, refined by successive zooming.
    fn grid_oracle_eta(returns: &[f64], eps: f64) -> f64 {
        let (mut lo, mut hi) = (ETA_MIN.ln(), ETA_MAX.ln());
        let mut best = 0.0;
        for _ in 0..8 {
            let m = 20_000;
            let mut best_v = f64::INFINITY;
            for k in 0..=m {
                let t = lo + (hi - lo) * k as f64 / m as f64;
                let v = reps_dual(returns, eps, t.exp());
                if v < best_v {
                    best_v = v;
                    best = t;
                }
            }
            let step = (hi - lo) / m as f64;
            lo = best - 2.0 * step;
            hi = best + 2.0 * step;
        }
        best.exp()
    }

    #[test]
    fn two_sample_matches_grid_oracle() {
        let r = [0.0, 1.0];
        let sol = reps_weights(&r, 0.1).unwrap();
        let eta = grid_oracle_eta(&r, 0.1);
        let w = weights_at(&r, eta);
        for (a, b) in sol.weights.iter().zip(&w) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert!(sol.kl <= 0.1 + 1e-4);
    }

    #[test]
    fn kl_feasible_on_random_instances() {
        let mut rng = RngStream::new(11, 0);
        for _ in 0..200 {
            let n = 4 + rng.index(253);
            let eps = rng.uniform_range(0.01, 2.0);
            let scale = 10f64.powf(rng.uniform_range(-2.0, 2.0));
            let r: Vec<f64> = (0..n).map(|_| scale * rng.normal()).collect();
            let sol = reps_weights(&r, eps).unwrap();
            assert!(sol.kl <= eps + 1e-4);
            assert!((sol.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shift_invariance() {
        let r = [0.3, -1.0, 2.0, 0.7, 1.1];
        let shifted: Vec<f64> = r.iter().map(|v| v + 123.0).collect();
        let a = reps_weights(&r, 0.4).unwrap();
        let b = reps_weights(&shifted, 0.4).unwrap();
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(reps_weights(&[1.0], 0.1).is_err());
        assert!(reps_weights(&[1.0, 2.0], 0.0).is_err());
        assert!(reps_weights(&[1.0, f64::NAN], 0.1).is_err());
    }
}
