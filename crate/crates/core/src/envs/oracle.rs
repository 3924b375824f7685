use serde::{Deserialize, Serialize};

use super::Environment;
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Estimate of `E_s[max_ξ R(s, ξ)]`.
    pub expected: f64,
    pub contexts: Vec<Vec<f64>>,
    pub best_returns: Vec<f64>,
    pub best_params: Vec<Vec<f64>>,
}

/// Dense enumeration over a one-dimensional parameter box.
pub fn grid_oracle(env: &Environment, n_contexts: usize, n_params: usize) -> Result<OracleResult> {
    let pbox = env.param_box();
    if pbox.len() != 1 || n_params < 2 || n_contexts == 0 {
        return Err(Error::invalid(
            "grid oracle needs a 1-D parameter box and non-empty grids",
        ));
    }
    let (lo, hi) = pbox[0];
    let contexts = env.context_grid(n_contexts);
    let mut best_returns = Vec::with_capacity(n_contexts);
    let mut best_params = Vec::with_capacity(n_contexts);
    for s in &contexts {
        let (mut best, mut arg) = (f64::NEG_INFINITY, lo);
        for j in 0..n_params {
            let xi = lo + (hi - lo) * j as f64 / (n_params - 1) as f64;
            let r = env.evaluate(s, &[xi])?;
            if r > best {
                best = r;
                arg = xi;
            }
        }
        best_returns.push(best);
        best_params.push(vec![arg]);
    }
    Ok(OracleResult {
        expected: best_returns.iter().sum::<f64>() / n_contexts as f64,
        contexts,
        best_returns,
        best_params,
    })
}

/// Per-context cross-entropy search with restarts; a lower bound on the
/// true optimum.
pub fn search_oracle(env: &Environment, n_contexts: usize, seed: u64) -> Result<OracleResult> {
    if n_contexts == 0 {
        return Err(Error::invalid("search oracle needs at least one context"));
    }
    let pbox = env.param_box();
    let d = pbox.len();
    let (pop, elite, iters, restarts) = (200usize, 20usize, 50usize, 6usize);
    // Smoothed updates keep the sampling spread from collapsing early.
    let smooth = 0.7;
    let contexts = env.context_grid(n_contexts);
    let mut best_returns = Vec::with_capacity(n_contexts);
    let mut best_params = Vec::with_capacity(n_contexts);
    for (ci, s) in contexts.iter().enumerate() {
        let mut rng = RngStream::new(seed, ci as u64);
        let mut best = (f64::NEG_INFINITY, vec![0.0; d]);
        for _ in 0..restarts {
            let mut mean: Vec<f64> = pbox
                .iter()
                .map(|&(lo, hi)| rng.uniform_range(lo, hi))
                .collect();
            let mut sd: Vec<f64> = pbox.iter().map(|&(lo, hi)| 0.5 * (hi - lo)).collect();
            for _ in 0..iters {
                let mut cand: Vec<(f64, Vec<f64>)> = (0..pop)
                    .map(|_| {
                        let x: Vec<f64> = (0..d).map(|k| mean[k] + sd[k] * rng.normal()).collect();
                        (env.evaluate(s, &x).unwrap_or(f64::NEG_INFINITY), x)
                    })
                    .collect();
                cand.sort_by(|a, b| b.0.total_cmp(&a.0));
                if cand[0].0 > best.0 {
                    best = cand[0].clone();
                }
                for k in 0..d {
                    let m = cand[..elite].iter().map(|c| c.1[k]).sum::<f64>() / elite as f64;
                    let v = cand[..elite]
                        .iter()
                        .map(|c| (c.1[k] - m).powi(2))
                        .sum::<f64>()
                        / elite as f64;
                    mean[k] = smooth * m + (1.0 - smooth) * mean[k];
                    sd[k] = (smooth * v.sqrt() + (1.0 - smooth) * sd[k])
                        .max(1e-6 * (pbox[k].1 - pbox[k].0));
                }
            }
        }
        // Shrinking local perturbations around the incumbent.
        let mut step: Vec<f64> = pbox.iter().map(|&(lo, hi)| 0.05 * (hi - lo)).collect();
        for _ in 0..30 {
            for _ in 0..pop {
                let x: Vec<f64> = (0..d).map(|k| best.1[k] + step[k] * rng.normal()).collect();
                let r = env.evaluate(s, &x).unwrap_or(f64::NEG_INFINITY);
                if r > best.0 {
                    best = (r, x);
                }
            }
            step.iter_mut().for_each(|v| *v *= 0.7);
        }
        best_returns.push(best.0);
        best_params.push(best.1);
    }
    Ok(OracleResult {
        expected: best_returns.iter().sum::<f64>() / n_contexts as f64,
        contexts,
        best_returns,
        best_params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_grid_oracle_matches_closed_form_profile() {
        // With separated modes the best return at s is the larger height profile.
        let env = Environment::preset("toy2").unwrap();
        let res = grid_oracle(&env, 200, 4001).unwrap();
        let closed: f64 = env
            .context_grid(200)
            .iter()
            .map(|s| {
                let a = (-(s[0] + 1.0).powi(2) / 2.0).exp();
                let b = (-(s[0] - 1.0).powi(2) / 2.0).exp();
                a.max(b)
            })
            .sum::<f64>()
            / 200.0;
        assert!(
            (res.expected - closed).abs() < 1e-3,
            "{} vs {closed}",
            res.expected
        );
    }

    #[test]
    fn search_oracle_finds_near_zero_arm_cost() {
        let env = Environment::preset("arm").unwrap();
        let res = search_oracle(&env, 3, 0).unwrap();
        for r in &res.best_returns {
            assert!(*r > -0.01, "{r}");
        }
        let again = search_oracle(&env, 3, 0).unwrap();
        assert_eq!(res, again);
    }

    #[test]
    fn grid_oracle_rejects_multidimensional_box() {
        let env = Environment::preset("arm").unwrap();
        assert!(grid_oracle(&env, 10, 10).is_err());
    }
}
