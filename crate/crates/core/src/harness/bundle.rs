use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::gating::{select_option, GatingMode, GpHyper, GpReturnModel, InputScaler, PriorMean};
use crate::optpolicy::GaussianOptionPolicy;
use crate::rng::{streams, RngStream};

/// An option policy in flat form: `W` row-major and the lower triangle of
/// `Σ` row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionRecord {
    pub feature_dim: usize,
    pub param_dim: usize,
    pub weights: Vec<f64>,
    pub cov_lower: Vec<f64>,
}

impl OptionRecord {
    pub fn from_policy(p: &GaussianOptionPolicy) -> Self {
        let w = p.weights();
        let c = p.covariance();
        let d = p.param_dim();
        Self {
            feature_dim: w.nrows(),
            param_dim: d,
            weights: (0..w.nrows())
                .flat_map(|i| (0..d).map(move |j| w[(i, j)]))
                .collect(),
            cov_lower: (0..d)
                .flat_map(|i| (0..=i).map(move |j| c[(i, j)]))
                .collect(),
        }
    }

    pub fn to_policy(&self, fmap: &FeatureMap) -> Result<GaussianOptionPolicy> {
        let (k, d) = (self.feature_dim, self.param_dim);
        if self.weights.len() != k * d || self.cov_lower.len() != d * (d + 1) / 2 {
            return Err(Error::invalid("option record has inconsistent sizes"));
        }
        let w = DMatrix::from_row_slice(k, d, &self.weights);
        let mut c = DMatrix::zeros(d, d);
        let mut it = self.cov_lower.iter();
        for i in 0..d {
            for j in 0..=i {
                let v = *it.next().expect("length checked");
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        GaussianOptionPolicy::new(w, c, fmap.clone())
    }
}

/// Training set and hyperparameters of the gating GP; refitting reproduces
/// the model exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpRecord {
    pub hyper: GpHyper,
    pub prior_mean: PriorMean,
    pub scaler: InputScaler,
    /// Rows `z = [ξ; s]`.
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl GpRecord {
    pub fn from_training(
        inputs: &DMatrix<f64>,
        targets: &[f64],
        hyper: GpHyper,
        prior_mean: PriorMean,
        scaler: InputScaler,
    ) -> Self {
        Self {
            hyper,
            prior_mean,
            scaler,
            inputs: inputs
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            targets: targets.to_vec(),
        }
    }

    pub fn fit(&self) -> Result<GpReturnModel> {
        let d = self.inputs.first().map_or(0, |r| r.len());
        if self.inputs.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("ragged GP inputs"));
        }
        let flat: Vec<f64> = self.inputs.iter().flatten().copied().collect();
        let z = DMatrix::from_row_slice(self.inputs.len(), d, &flat);
        GpReturnModel::fit_with_prior(
            &z,
            &self.targets,
            self.hyper,
            self.scaler.clone(),
            self.prior_mean,
        )
    }
}

/// Everything needed to replay the learned hierarchical policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyBundle {
    pub environment: Environment,
    pub features: FeatureMap,
    pub gating: GatingMode,
    pub options: Vec<OptionRecord>,
    pub gp: GpRecord,
}

/// Outcome of replaying a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub option_counts: Vec<usize>,
}

impl PolicyBundle {
    pub fn policies(&self) -> Result<Vec<GaussianOptionPolicy>> {
        self.options
            .iter()
            .map(|o| o.to_policy(&self.features))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Runs `episodes` fresh episodes with greedy gating. With `use_mean` the
    /// option mean is executed instead of a sample.
    pub fn evaluate(&self, episodes: usize, seed: u64, use_mean: bool) -> Result<EvalSummary> {
        if episodes == 0 {
            return Err(Error::invalid("evaluation needs at least one episode"));
        }
        let env = &self.environment;
        env.validate()?;
        let policies = self.policies()?;
        if policies.is_empty() {
            return Err(Error::invalid("bundle holds no options"));
        }
        let gp = self.gp.fit()?;
        let opts: Vec<(&GaussianOptionPolicy, usize)> = policies.iter().map(|p| (p, 0)).collect();
        let mut returns = Vec::with_capacity(episodes);
        let mut counts = vec![0; policies.len()];
        for i in 0..episodes {
            let mut rng = RngStream::new(seed, streams::eval(i));
            let s = env.sample_context(&mut rng);
            let sel = select_option(&opts, &gp, &s, GatingMode::Greedy, &mut rng)?;
            let p = &policies[sel.option];
            let xi = if use_mean {
                p.mean(&s)?
            } else {
                p.sample(&s, &mut rng)?
            };
            returns.push(env.evaluate(&s, xi.as_slice())?);
            counts[sel.option] += 1;
        }
        let n = episodes as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        Ok(EvalSummary {
            episodes,
            mean_return: mean,
            std_return: var.sqrt(),
            option_counts: counts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn option_record_round_trip() {
        let fmap = FeatureMap::linear(2);
        let w = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let p = GaussianOptionPolicy::new(w, c, fmap.clone()).unwrap();
        let rec = OptionRecord::from_policy(&p);
        assert_eq!(rec.weights, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(rec.cov_lower, vec![2.0, 0.5, 1.0]);
        let back = rec.to_policy(&fmap).unwrap();
        assert_eq!(back.weights(), p.weights());
        assert_eq!(back.covariance(), p.covariance());
        let bad = OptionRecord {
            cov_lower: vec![1.0],
            ..rec
        };
        assert!(bad.to_policy(&fmap).is_err());
    }

    #[test]
    fn bundle_json_round_trip_and_replay() {
        let env = Environment::preset("toy2").unwrap();
        let fmap = FeatureMap::linear(1);
        let p =
            GaussianOptionPolicy::constant(&[2.0], DMatrix::from_element(1, 1, 0.01), fmap.clone())
                .unwrap();
        let mut rng = RngStream::new(0, 0);
        let n = 30;
        let mut z = DMatrix::zeros(n, 2);
        let mut y = Vec::new();
        for i in 0..n {
            let s = env.sample_context(&mut rng);
            let xi = env.sample_initial_param(&mut rng);
            z[(i, 0)] = xi[0];
            z[(i, 1)] = s[0];
            y.push(env.evaluate(&s, &xi).unwrap());
        }
        let scaler = InputScaler::fit(&z);
        let bundle = PolicyBundle {
            environment: env,
            features: fmap,
            gating: GatingMode::Ucb { kappa: 1.0 },
            options: vec![OptionRecord::from_policy(&p)],
            gp: GpRecord::from_training(
                &z,
                &y,
                GpHyper::new(1.0, 0.5, 0.05).unwrap(),
                PriorMean::Min,
                scaler,
            ),
        };
        let back = PolicyBundle::from_json(&bundle.to_json().unwrap()).unwrap();
        assert_eq!(back, bundle);
        let a = bundle.evaluate(50, 3, false).unwrap();
        let b = back.evaluate(50, 3, false).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.option_counts, vec![50]);
        // Executing ξ = 2 everywhere: mode A pays off near s = −1 only.
        let m = bundle.evaluate(50, 3, true).unwrap();
        assert!(m.mean_return > 0.0 && m.mean_return < 1.0);
    }
}
