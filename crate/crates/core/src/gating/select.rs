use serde::{Deserialize, Serialize};

use super::gp::GpReturnModel;
use super::uncertain::UncertainInput;
use crate::error::{Error, Result};
use crate::optpolicy::GaussianOptionPolicy;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GatingMode {
    Greedy,
    Ucb { kappa: f64 },
    Softmax { temperature: f64 },
}

impl Default for GatingMode {
    fn default() -> Self {
        GatingMode::Ucb { kappa: 1.0 }
    }
}

/// Chosen option plus the gate distribution it was drawn from (one-hot for
/// the deterministic modes) and the per-option predicted return moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub option: usize,
    pub gate_probs: Vec<f64>,
    pub expected: Vec<f64>,
    pub std: Vec<f64>,
}

fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate() {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

/// Picks an option for context `s`. Visit counts are accepted for
/// interface symmetry but not used: the predictive spread already carries
/// the exploration signal.
pub fn select_option(
    options: &[(&GaussianOptionPolicy, usize)],
    gp: &GpReturnModel,
    s: &[f64],
    mode: GatingMode,
    rng: &mut RngStream,
) -> Result<Selection> {
    if options.is_empty() {
        return Err(Error::invalid("select_option needs at least one option"));
    }
    let m = options.len();
    let need_var = matches!(mode, GatingMode::Ucb { .. });
    let mut expected = Vec::with_capacity(m);
    let mut std = Vec::with_capacity(m);
    for (policy, _) in options {
        let mu = policy.mean(s)?;
        let u = UncertainInput::option_at_context(mu.as_slice(), policy.covariance(), s)?;
        if need_var {
            let (e, v) = gp.predict_uncertain(&u)?;
            expected.push(e);
            std.push(v.sqrt());
        } else {
            expected.push(gp.predict_uncertain_mean(&u)?);
            std.push(0.0);
        }
    }
    let (option, gate_probs) = match mode {
        GatingMode::Greedy => {
            let o = argmax_lowest(&expected);
            (o, one_hot(m, o))
        }
        GatingMode::Ucb { kappa } => {
            let scores: Vec<f64> = expected
                .iter()
                .zip(&std)
                .map(|(e, s)| e + kappa * s)
                .collect();
            let o = argmax_lowest(&scores);
            (o, one_hot(m, o))
        }
        GatingMode::Softmax { temperature } => {
            if !(temperature > 0.0) {
                return Err(Error::invalid("softmax temperature must be positive"));
            }
            let top = expected.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = expected
                .iter()
                .map(|e| ((e - top) / temperature).exp())
                .collect();
            let z: f64 = w.iter().sum();
            let probs: Vec<f64> = w.iter().map(|v| v / z).collect();
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut o = m - 1;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    o = i;
                    break;
                }
            }
            (o, probs)
        }
    };
    Ok(Selection {
        option,
        gate_probs,
        expected,
        std,
    })
}

fn one_hot(m: usize, o: usize) -> Vec<f64> {
    let mut v = vec![0.0; m];
    v[o] = 1.0;
    v
}
