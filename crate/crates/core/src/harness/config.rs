use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingConfig;
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::gating::{GatingMode, GpHyper, PriorMean};
use crate::mixest::VbemOptions;
use crate::optpolicy::{Ridge, UpdateMethod, UpdateParams};
use crate::weighting::ReturnTransform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureConfig {
    /// `φ(s) = [s; 1]`.
    Linear,
    /// Squared-exponential bumps on a regular grid over the context box.
    SeGrid {
        per_dim: usize,
        bandwidth_scale: f64,
        bias: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateConfig {
    pub method: UpdateMethod,
    pub ridge: f64,
    /// Weight on the previous covariance for sample-starved options.
    pub shrinkage: f64,
    pub features: FeatureConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureConfig {
    /// Symmetric Dirichlet concentration; small values switch clusters off.
    pub alpha0: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Clusters below this share of the weighted mass are dropped.
    pub min_rel_mass: f64,
    /// Caps each weight at `truncation · √n` times the mean weight before the
    /// fit, limiting the influence of samples drawn far in a narrow
    /// behavior policy's tail. 0 disables.
    pub truncation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpConfig {
    /// The GP is fitted on the most recent `n_gp` samples...
    pub n_gp: usize,
    /// ...thinned evenly to at most this many points.
    pub max_points: usize,
    pub hyper_iters: usize,
    /// Re-tune hyperparameters every this many iterations.
    pub hyper_every: usize,
    /// Subsample size for marginal-likelihood ascent.
    pub search_points: usize,
    /// Initial length scale in standardized input units.
    pub length: f64,
    pub prior_mean: PriorMean,
    /// Noise floor as a fraction of the target standard deviation.
    pub min_noise_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSection {
    pub enabled: bool,
    pub k_nn: usize,
    /// 0 selects the median squared pairwise distance.
    pub heat_bandwidth: f64,
    pub out_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub name: String,
    /// Merged over the preset's parameters (same keys as the preset).
    #[serde(default)]
    pub overrides: toml::Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpsdeConfig {
    pub seed: u64,
    pub iterations: usize,
    pub initial_rollouts: usize,
    pub rollouts_per_iter: usize,
    pub o_max: usize,
    pub threads: usize,
    /// Write measured wall time into trace.csv; off keeps the file
    /// byte-reproducible.
    pub record_wall_time: bool,
    /// Most recent samples used for weighting and mixture estimation; 0 = all.
    pub replay_window: usize,
    pub transform: ReturnTransform,
    pub update: UpdateConfig,
    pub gating: GatingMode,
    pub mixture: MixtureConfig,
    pub gp: GpConfig,
    pub embedding: EmbeddingSection,
    pub environment: EnvironmentConfig,
}

impl HpsdeConfig {
    /// Defaults tuned per environment preset.
    pub fn for_env(name: &str) -> Result<Self> {
        let mut cfg = Self {
            seed: 0,
            iterations: 30,
            initial_rollouts: 200,
            rollouts_per_iter: 200,
            o_max: 10,
            threads: 1,
            record_wall_time: false,
            replay_window: 1000,
            transform: ReturnTransform::Exponential { beta: 5.0 },
            update: UpdateConfig {
                method: UpdateMethod::Reps { epsilon: 1.0 },
                ridge: Ridge::default().coeff,
                shrinkage: 1e-2,
                features: FeatureConfig::Linear,
            },
            gating: GatingMode::Ucb { kappa: 1.0 },
            mixture: MixtureConfig {
                alpha0: 1e-3,
                tol: 1e-4,
                max_iter: 200,
                min_rel_mass: 0.02,
                truncation: 1.0,
            },
            gp: GpConfig {
                n_gp: 3000,
                max_points: 250,
                prior_mean: PriorMean::Min,
                hyper_iters: 15,
                hyper_every: 1,
                search_points: 150,
                length: 1.0,
                min_noise_frac: 1e-3,
            },
            embedding: EmbeddingSection {
                enabled: false,
                k_nn: 10,
                heat_bandwidth: 0.0,
                out_dim: 2,
            },
            environment: EnvironmentConfig {
                name: name.to_string(),
                overrides: toml::Table::new(),
            },
        };
        match name {
            "toy2" | "toy3" => {}
            "puddle" => {
                cfg.o_max = 20;
                cfg.transform = ReturnTransform::Exponential { beta: 2.0 };
                cfg.update.features = FeatureConfig::SeGrid {
                    per_dim: 5,
                    bandwidth_scale: 1.0,
                    bias: true,
                };
                // The uncertain-input variance is quadratic in the GP size and
                // is evaluated per option per rollout.
                cfg.gp.max_points = 120;
            }
            "arm" => {
                // Collisions cost several return units, so an optimism bonus
                // keeps steering rollouts into the obstacle.
                cfg.gating = GatingMode::Greedy;
            }
            other => {
                return Err(Error::config(format!(
                    "no defaults for environment '{other}'"
                )));
            }
        }
        Ok(cfg)
    }

    /// Parses a config file. Keys absent from the file take the defaults of
    /// the environment named in `[environment] name` (toy2 if omitted).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config(format!("config parse error: {e}")))?;
        let name = user
            .get("environment")
            .and_then(|e| e.get("name"))
            .and_then(|n| n.as_str())
            .unwrap_or("toy2")
            .to_string();
        let base = Self::for_env(&name)?;
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::config(e.to_string()))?;
        merge_tables(&mut merged, user);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(format!("config error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.o_max < 1 {
            return Err(Error::config("o_max must be at least 1"));
        }
        if self.rollouts_per_iter == 0 || self.initial_rollouts < 2 {
            return Err(Error::config(
                "need rollouts_per_iter ≥ 1 and initial_rollouts ≥ 2",
            ));
        }
        if self.threads == 0 {
            return Err(Error::config("threads must be at least 1"));
        }
        match self.transform {
            ReturnTransform::Exponential { beta } if !(beta > 0.0) => {
                return Err(Error::config("transform beta must be positive"))
            }
            _ => {}
        }
        if let UpdateMethod::Reps { epsilon } = self.update.method {
            if !(epsilon > 0.0) {
                return Err(Error::config("REPS epsilon must be positive"));
            }
        }
        match self.gating {
            GatingMode::Ucb { kappa } if !(kappa >= 0.0) => {
                return Err(Error::config("UCB kappa must be ≥ 0"))
            }
            GatingMode::Softmax { temperature } if !(temperature > 0.0) => {
                return Err(Error::config("softmax temperature must be positive"))
            }
            _ => {}
        }
        if !(self.mixture.alpha0 > 0.0) || !(self.mixture.tol > 0.0) || self.mixture.max_iter == 0 {
            return Err(Error::config(
                "mixture alpha0, tol and max_iter must be positive",
            ));
        }
        if !(self.mixture.truncation >= 0.0) {
            return Err(Error::config("mixture truncation must be ≥ 0"));
        }
        if !(0.0..1.0).contains(&self.mixture.min_rel_mass) {
            return Err(Error::config("mixture min_rel_mass must lie in [0, 1)"));
        }
        if self.gp.n_gp < 3
            || self.gp.max_points < 3
            || self.gp.search_points < 3
            || self.gp.hyper_every == 0
            || !(self.gp.length > 0.0)
        {
            return Err(Error::config("GP settings out of range"));
        }
        if !(self.update.ridge >= 0.0) || !(0.0..=1.0).contains(&self.update.shrinkage) {
            return Err(Error::config(
                "update ridge must be ≥ 0 and shrinkage in [0, 1]",
            ));
        }
        self.embedding_config()
            .validate()
            .map_err(|e| Error::config(e.to_string()))?;
        self.environment()?;
        Ok(())
    }

    pub fn environment(&self) -> Result<Environment> {
        let preset = Environment::preset(&self.environment.name)?;
        if self.environment.overrides.is_empty() {
            return Ok(preset);
        }
        let mut spec =
            toml::Table::try_from(&preset.spec).map_err(|e| Error::config(e.to_string()))?;
        merge_tables(&mut spec, self.environment.overrides.clone());
        let spec = toml::Value::Table(spec)
            .try_into()
            .map_err(|e: toml::de::Error| {
                Error::config(format!("environment override error: {e}"))
            })?;
        let env = Environment {
            name: preset.name,
            spec,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn feature_map(&self, env: &Environment) -> Result<FeatureMap> {
        match &self.update.features {
            FeatureConfig::Linear => Ok(FeatureMap::linear(env.context_dim())),
            FeatureConfig::SeGrid {
                per_dim,
                bandwidth_scale,
                bias,
            } => {
                let (lo, hi): (Vec<f64>, Vec<f64>) = env.context_box().into_iter().unzip();
                FeatureMap::se_grid(&lo, &hi, *per_dim, *bandwidth_scale, *bias)
            }
        }
    }

    pub fn update_params(&self) -> UpdateParams {
        UpdateParams {
            transform: self.transform,
            ridge: Ridge {
                coeff: self.update.ridge,
            },
            shrinkage: self.update.shrinkage,
        }
    }

    pub fn vbem_options(&self) -> VbemOptions {
        VbemOptions {
            m_max: self.o_max,
            tol: self.mixture.tol,
            max_iter: self.mixture.max_iter,
        }
    }

    pub fn embedding_config(&self) -> EmbeddingConfig {
        EmbeddingConfig {
            k_nn: self.embedding.k_nn,
            heat_bandwidth: (self.embedding.heat_bandwidth > 0.0)
                .then_some(self.embedding.heat_bandwidth),
            out_dim: self.embedding.out_dim,
        }
    }

    pub(crate) fn initial_hyper(&self, target_sd: f64) -> GpHyper {
        let sd = if target_sd > 1e-12 { target_sd } else { 1.0 };
        GpHyper {
            length: self.gp.length,
            sigma_f: sd,
            sigma_n: 0.1 * sd,
        }
    }
}

/// Recursive merge: tables merge key by key, everything else is replaced.
fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvSpec;

    #[test]
    fn defaults_validate_for_every_preset() {
        for name in crate::envs::PRESETS {
            let cfg = HpsdeConfig::for_env(name).unwrap();
            cfg.validate().unwrap();
            let text = cfg.to_toml_string().unwrap();
            assert_eq!(HpsdeConfig::from_toml_str(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn partial_file_takes_environment_defaults() {
        let cfg = HpsdeConfig::from_toml_str(
            r#"
            seed = 7
            iterations = 3
            [environment]
            name = "puddle"
            [gating]
            mode = "softmax"
            temperature = 0.5
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.iterations, 3);
        assert_eq!(cfg.o_max, 20);
        assert_eq!(cfg.gating, GatingMode::Softmax { temperature: 0.5 });
    }

    #[test]
    fn environment_overrides_merge_into_preset() {
        let cfg = HpsdeConfig::from_toml_str(
            r#"
            [environment]
            name = "arm"
            [environment.overrides]
            c_obs = 42.0
            [environment.overrides.obstacle]
            radius = 0.3
            "#,
        )
        .unwrap();
        let env = cfg.environment().unwrap();
        match env.spec {
            EnvSpec::Arm(a) => {
                assert_eq!(a.c_obs, 42.0);
                assert_eq!(a.obstacle.radius, 0.3);
                assert_eq!(a.obstacle.center, (1.4, 0.0));
            }
            _ => panic!("expected arm"),
        }
    }

    #[test]
    fn config_errors() {
        assert!(matches!(
            HpsdeConfig::from_toml_str("o_max = 0"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            HpsdeConfig::from_toml_str("unknown_key = 1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            HpsdeConfig::from_toml_str("[environment]\nname = \"maze\""),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            HpsdeConfig::from_toml_str("seed = ["),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            HpsdeConfig::from_toml_str(
                "[environment]\nname = \"toy2\"\n[environment.overrides]\nfloor = \"x\""
            ),
            Err(Error::Config(_))
        ));
    }
}
