use nalgebra::{DMatrix, DVector};

use super::gp::{kernel_matrix, GpHyper};
use crate::error::{Error, Result};
use crate::linalg::{self, LN_2PI};

/// Bounds and budget for marginal-likelihood ascent. Bounds are on the
/// hyperparameters themselves, not their logs.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperSearch {
    pub iters: usize,
    pub length: (f64, f64),
    pub sigma_f: (f64, f64),
    pub sigma_n: (f64, f64),
    /// Subsample size used for the search when there is more data.
    pub max_points: usize,
}

impl Default for HyperSearch {
    fn default() -> Self {
        Self {
            iters: 50,
            length: (1e-3, 1e3),
            sigma_f: (1e-6, 1e6),
            sigma_n: (1e-6, 1e6),
            max_points: 400,
        }
    }
}

/// Log marginal likelihood of centered targets and its gradient with
/// respect to `[ln l, ln σ_f, ln σ_n]`.
pub fn log_marginal_likelihood(
    inputs: &DMatrix<f64>,
    centered: &[f64],
    hyper: &GpHyper,
) -> Result<(f64, [f64; 3])> {
    let n = inputs.nrows();
    if centered.len() != n {
        return Err(Error::invalid("one target per input required"));
    }
    let k = kernel_matrix(inputs, hyper);
    let chol = linalg::cholesky(&k, "GP marginal likelihood")?;
    let y = DVector::from_column_slice(centered);
    let alpha = chol.solve(&y);
    let value = -0.5 * y.dot(&alpha) - 0.5 * linalg::log_det_chol(&chol) - 0.5 * n as f64 * LN_2PI;

    // W = ααᵀ − K⁻¹; ∂L/∂θ = ½ Σ_ij W_ij ∂K_ij/∂θ.
    let kinv = chol.inverse();
    let sf2 = hyper.sigma_f * hyper.sigma_f;
    let sn2 = hyper.sigma_n * hyper.sigma_n;
    let l2 = hyper.length * hyper.length;
    let mut g = [0.0; 3];
    for i in 0..n {
        let w = alpha[i] * alpha[i] - kinv[(i, i)];
        g[1] += 0.5 * w * 2.0 * sf2;
        g[2] += 0.5 * w * 2.0 * sn2;
        for j in 0..i {
            let w = 2.0 * (alpha[i] * alpha[j] - kinv[(i, j)]);
            let kf = k[(i, j)];
            let mut r2 = 0.0;
            for c in 0..inputs.ncols() {
                let d = inputs[(i, c)] - inputs[(j, c)];
                r2 += d * d;
            }
            g[0] += 0.5 * w * kf * r2 / l2;
            g[1] += 0.5 * w * 2.0 * kf;
        }
    }
    Ok((value, g))
}

/// Gradient ascent on the log marginal likelihood in log-hyperparameter
/// space. Only improving steps are taken; the step grows on success and
/// halves on failure. A non-finite start falls back to `init`.
pub fn gp_optimize_hypers(
    inputs: &DMatrix<f64>,
    targets: &[f64],
    init: GpHyper,
    iters: usize,
) -> Result<GpHyper> {
    gp_optimize_hypers_with(
        inputs,
        targets,
        init,
        &HyperSearch {
            iters,
            ..HyperSearch::default()
        },
    )
}

pub fn gp_optimize_hypers_with(
    inputs: &DMatrix<f64>,
    targets: &[f64],
    init: GpHyper,
    search: &HyperSearch,
) -> Result<GpHyper> {
    init.validate()?;
    let n = inputs.nrows();
    if n == 0 || targets.len() != n {
        return Err(Error::invalid(
            "hyperparameter search needs matching inputs and targets",
        ));
    }
    // Deterministic thinning keeps the search cost bounded.
    let (z, y): (DMatrix<f64>, Vec<f64>) = if n > search.max_points {
        let stride = n as f64 / search.max_points as f64;
        let idx: Vec<usize> = (0..search.max_points)
            .map(|i| ((i as f64 * stride) as usize).min(n - 1))
            .collect();
        (
            inputs.select_rows(&idx),
            idx.iter().map(|&i| targets[i]).collect(),
        )
    } else {
        (inputs.clone(), targets.to_vec())
    };
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let yc: Vec<f64> = y.iter().map(|v| v - mean).collect();

    let lo = [
        search.length.0.ln(),
        search.sigma_f.0.ln(),
        search.sigma_n.0.ln(),
    ];
    let hi = [
        search.length.1.ln(),
        search.sigma_f.1.ln(),
        search.sigma_n.1.ln(),
    ];
    let clamp = |mut x: [f64; 3]| {
        for i in 0..3 {
            x[i] = x[i].clamp(lo[i], hi[i]);
        }
        x
    };
    let eval = |x: [f64; 3]| -> Option<(f64, [f64; 3])> {
        log_marginal_likelihood(&z, &yc, &GpHyper::from_log(x))
            .ok()
            .filter(|(v, g)| v.is_finite() && g.iter().all(|c| c.is_finite()))
    };

    let mut x = clamp(init.to_log());
    let Some((mut best, mut grad)) = eval(x) else {
        log::warn!("GP hyperparameter search: non-finite start, keeping initial values");
        return Ok(init);
    };
    let mut step = 0.2;
    for _ in 0..search.iters {
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < 1e-10 || step < 1e-8 {
            break;
        }
        let cand = clamp([
            x[0] + step * grad[0] / gnorm,
            x[1] + step * grad[1] / gnorm,
            x[2] + step * grad[2] / gnorm,
        ]);
        match eval(cand) {
            Some((v, g)) if v > best => {
                x = cand;
                best = v;
                grad = g;
                step *= 1.5;
            }
            _ => step *= 0.5,
        }
    }
    Ok(GpHyper::from_log(x))
}
