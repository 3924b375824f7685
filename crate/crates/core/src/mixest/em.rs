use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::init::{hard_assign, weighted_kmeans_pp};
use crate::error::{Error, Result};
use crate::linalg::{self, log_sum_exp};
use crate::rng::RngStream;

/// Regularization added to a collapsed covariance diagonal.
pub const COVARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub mixing: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub precisions: Vec<DMatrix<f64>>,
}

impl GaussianMixture {
    pub fn covariance(&self, l: usize) -> DMatrix<f64> {
        self.precisions[l]
            .clone()
            .try_inverse()
            .expect("precision is SPD")
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub mixture: GaussianMixture,
    pub responsibilities: DMatrix<f64>,
    /// Weighted log-likelihood after each E-step.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

struct Component {
    mix: f64,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

fn m_step(
    points: &DMatrix<f64>,
    weights: &[f64],
    resp: &DMatrix<f64>,
    prev: Option<&[Component]>,
) -> Vec<Component> {
    let (n, d) = points.shape();
    let total: f64 = weights.iter().sum();
    (0..resp.ncols())
        .map(|l| {
            let nl: f64 = (0..n).map(|i| weights[i] * resp[(i, l)]).sum();
            if nl <= 0.0 {
                return match prev {
                    Some(p) => Component {
                        mix: 0.0,
                        mean: p[l].mean.clone(),
                        cov: p[l].cov.clone(),
                    },
                    None => Component {
                        mix: 0.0,
                        mean: DVector::zeros(d),
                        cov: DMatrix::identity(d, d),
                    },
                };
            }
            let mut mean = DVector::zeros(d);
            for i in 0..n {
                mean += points.row(i).transpose() * (weights[i] * resp[(i, l)]);
            }
            mean /= nl;
            let mut cov = DMatrix::zeros(d, d);
            for i in 0..n {
                let wr = weights[i] * resp[(i, l)];
                if wr > 0.0 {
                    let diff = points.row(i).transpose() - &mean;
                    cov += &diff * diff.transpose() * wr;
                }
            }
            cov /= nl;
            linalg::symmetrize(&mut cov);
            if cov.clone().cholesky().is_none() {
                log::info!("EM component {l} collapsed; adding {COVARIANCE_FLOOR:e} to diagonal");
                for j in 0..d {
                    cov[(j, j)] += COVARIANCE_FLOOR;
                }
            }
            Component {
                mix: nl / total,
                mean,
                cov,
            }
        })
        .collect()
}

/// Returns (responsibilities, weighted log-likelihood).
fn e_step(
    points: &DMatrix<f64>,
    weights: &[f64],
    comps: &[Component],
) -> Result<(DMatrix<f64>, f64)> {
    let n = points.nrows();
    let m = comps.len();
    let mut chols = Vec::with_capacity(m);
    for (l, c) in comps.iter().enumerate() {
        let ch = match c.cov.clone().cholesky() {
            Some(ch) => ch,
            None => {
                let mut cov = c.cov.clone();
                for j in 0..cov.nrows() {
                    cov[(j, j)] += COVARIANCE_FLOOR;
                }
                linalg::cholesky(&cov, &format!("EM covariance of component {l}"))?
            }
        };
        chols.push(ch);
    }
    let mut resp = DMatrix::zeros(n, m);
    let mut ll = 0.0;
    let mut logs = vec![f64::NEG_INFINITY; m];
    for i in 0..n {
        let x = points.row(i).transpose();
        for l in 0..m {
            logs[l] = if comps[l].mix > 0.0 {
                comps[l].mix.ln() + linalg::gaussian_log_density(&x, &comps[l].mean, &chols[l])
            } else {
                f64::NEG_INFINITY
            };
        }
        let lse = log_sum_exp(&logs);
        ll += weights[i] * lse;
        for l in 0..m {
            resp[(i, l)] = (logs[l] - lse).exp();
        }
    }
    Ok((resp, ll))
}

/// Weighted maximum-likelihood EM for a Gaussian mixture with `m` components.
/// Weights scale each sample's contribution to the sufficient statistics.
pub fn ml_em_oracle(
    points: &DMatrix<f64>,
    weights: &[f64],
    m: usize,
    tol: f64,
    max_iter: usize,
    rng: &mut RngStream,
) -> Result<EmFit> {
    let n = points.nrows();
    if n == 0 || m == 0 || weights.len() != n {
        return Err(Error::invalid(
            "ml_em_oracle needs points, matching weights and m >= 1",
        ));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::invalid(
            "weights must be non-negative with positive sum",
        ));
    }
    let centers = weighted_kmeans_pp(points, weights, m, rng);
    let mut resp = hard_assign(points, &centers);
    let mut comps = m_step(points, weights, &resp, None);
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        let (next, ll) = e_step(points, weights, &comps)?;
        let delta = (&next - &resp).amax();
        resp = next;
        history.push(ll);
        comps = m_step(points, weights, &resp, Some(&comps));
        if delta < tol {
            converged = true;
            break;
        }
    }
    let mixture = GaussianMixture {
        mixing: comps.iter().map(|c| c.mix).collect(),
        means: comps.iter().map(|c| c.mean.clone()).collect(),
        precisions: comps
            .iter()
            .map(|c| {
                let mut p = c
                    .cov
                    .clone()
                    .try_inverse()
                    .unwrap_or_else(|| DMatrix::identity(c.cov.nrows(), c.cov.nrows()));
                linalg::symmetrize(&mut p);
                p
            })
            .collect(),
    };
    Ok(EmFit {
        mixture,
        responsibilities: resp,
        log_likelihood: history,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(rng: &mut RngStream, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, 2, |_, j| {
            if j == 0 {
                2.0 + rng.normal()
            } else {
                -1.0 + 0.5 * rng.normal()
            }
        })
    }

    #[test]
    fn single_component_closed_form() {
        let mut rng = RngStream::new(5, 0);
        let pts = cloud(&mut rng, 200);
        let fit = ml_em_oracle(&pts, &[1.0; 200], 1, 1e-10, 50, &mut rng).unwrap();
        let mean = pts.row_mean().transpose();
        assert!((&fit.mixture.means[0] - &mean).amax() < 1e-12);
        let mut cov = DMatrix::zeros(2, 2);
        for i in 0..200 {
            let d = pts.row(i).transpose() - &mean;
            cov += &d * d.transpose();
        }
        cov /= 200.0;
        assert!((fit.mixture.covariance(0) - cov).amax() < 1e-10);
        assert!((fit.mixture.mixing[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_component_weighted_mean() {
        let mut rng = RngStream::new(6, 0);
        let pts = cloud(&mut rng, 50);
        let w: Vec<f64> = (0..50).map(|i| 0.1 + (i % 5) as f64).collect();
        let fit = ml_em_oracle(&pts, &w, 1, 1e-10, 50, &mut rng).unwrap();
        let total: f64 = w.iter().sum();
        let mut mean = DVector::zeros(2);
        for i in 0..50 {
            mean += pts.row(i).transpose() * w[i];
        }
        mean /= total;
        assert!((&fit.mixture.means[0] - mean).amax() < 1e-12);
    }

    #[test]
    fn log_likelihood_non_decreasing() {
        let mut rng = RngStream::new(7, 0);
        let mut pts = cloud(&mut rng, 300);
        for i in 0..150 {
            pts[(i, 0)] += 6.0;
        }
        let w: Vec<f64> = (0..300).map(|_| rng.uniform() + 0.05).collect();
        let fit = ml_em_oracle(&pts, &w, 3, 1e-12, 200, &mut rng).unwrap();
        for pair in fit.log_likelihood.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9, "{} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn collapsed_component_regularized() {
        let pts = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]);
        let mut rng = RngStream::new(0, 0);
        let fit = ml_em_oracle(&pts, &[1.0; 3], 1, 1e-10, 5, &mut rng).unwrap();
        assert!(fit.mixture.precisions[0][(0, 0)].is_finite());
    }
}
