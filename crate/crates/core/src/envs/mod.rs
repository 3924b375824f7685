//! Benchmark environments: multi-modal toy surfaces, a DMP puddle world
//! and a planar redundant-arm reaching task.

mod arm;
mod dmp;
mod oracle;
mod puddle;
mod toy;

pub use arm::{arm_fk, arm_return, elbow_sign, ArmPose, ArmTask, Disc};
pub use dmp::{dmp_rollout, DmpGains, DmpParams, DmpTrajectory};
pub use oracle::{grid_oracle, search_oracle, OracleResult};
pub use puddle::{puddle_return, Puddle, PuddleLayout};
pub use toy::{toy_return, ToyMode, ToyModeSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    Toy(ToyModeSpec),
    Puddle(PuddleLayout),
    Arm(ArmTask),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub name: String,
    pub spec: EnvSpec,
}

pub const PRESETS: &[&str] = &["toy2", "toy3", "puddle", "arm"];

impl Environment {
    pub fn preset(name: &str) -> Result<Self> {
        let spec = match name {
            "toy2" => EnvSpec::Toy(ToyModeSpec::two_mode()),
            "toy3" => EnvSpec::Toy(ToyModeSpec::three_mode()),
            "puddle" => EnvSpec::Puddle(PuddleLayout::default()),
            "arm" => EnvSpec::Arm(ArmTask::default()),
            other => {
                return Err(Error::config(format!(
                    "unknown environment '{other}' (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(Self {
            name: name.to_string(),
            spec,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match &self.spec {
            EnvSpec::Toy(t) => t.validate(),
            EnvSpec::Puddle(p) => p.validate(),
            EnvSpec::Arm(a) => a.validate(),
        }
    }

    pub fn context_dim(&self) -> usize {
        match &self.spec {
            EnvSpec::Toy(_) | EnvSpec::Puddle(_) => 1,
            EnvSpec::Arm(_) => 2,
        }
    }

    pub fn param_dim(&self) -> usize {
        self.param_box().len()
    }

    /// Per-dimension bounds of the initial uniform sampling distribution.
    pub fn param_box(&self) -> Vec<(f64, f64)> {
        match &self.spec {
            EnvSpec::Toy(t) => vec![t.param_box],
            EnvSpec::Puddle(p) => vec![p.weight_box; p.n_basis],
            EnvSpec::Arm(a) => vec![a.joint_limits; a.n_links()],
        }
    }

    /// Axis-aligned bounds of the context support.
    pub fn context_box(&self) -> Vec<(f64, f64)> {
        match &self.spec {
            EnvSpec::Toy(t) => vec![t.context_box],
            EnvSpec::Puddle(p) => vec![p.goal_range],
            EnvSpec::Arm(a) => {
                let (lo, hi) = a.goal_angles;
                let ys = [a.goal_at(lo).1, a.goal_at(hi).1];
                let xs = [a.goal_at(lo).0, a.goal_at(hi).0, a.goal_radius];
                vec![
                    (
                        xs.iter().cloned().fold(f64::INFINITY, f64::min),
                        a.goal_radius,
                    ),
                    (ys[0].min(ys[1]), ys[0].max(ys[1])),
                ]
            }
        }
    }

    /// Maps `u ∈ [0,1)` to a context; uniform `u` gives `d(s)`.
    fn context_at(&self, u: f64) -> Vec<f64> {
        match &self.spec {
            EnvSpec::Toy(t) => vec![t.context_box.0 + u * (t.context_box.1 - t.context_box.0)],
            EnvSpec::Puddle(p) => vec![p.goal_range.0 + u * (p.goal_range.1 - p.goal_range.0)],
            EnvSpec::Arm(a) => {
                let ang = a.goal_angles.0 + u * (a.goal_angles.1 - a.goal_angles.0);
                let g = a.goal_at(ang);
                vec![g.0, g.1]
            }
        }
    }

    pub fn sample_context(&self, rng: &mut RngStream) -> Vec<f64> {
        self.context_at(rng.uniform())
    }

    /// Midpoint quadrature nodes for `E_s[·]`.
    pub fn context_grid(&self, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| self.context_at((i as f64 + 0.5) / n as f64))
            .collect()
    }

    pub fn sample_initial_param(&self, rng: &mut RngStream) -> Vec<f64> {
        self.param_box()
            .iter()
            .map(|&(lo, hi)| rng.uniform_range(lo, hi))
            .collect()
    }

    /// Log density of the initial uniform parameter distribution.
    pub fn initial_log_density(&self) -> f64 {
        -self
            .param_box()
            .iter()
            .map(|(lo, hi)| (hi - lo).ln())
            .sum::<f64>()
    }

    /// Pure and deterministic in `(s, ξ)`.
    pub fn evaluate(&self, s: &[f64], xi: &[f64]) -> Result<f64> {
        if s.len() != self.context_dim() || xi.len() != self.param_dim() {
            return Err(Error::invalid(format!(
                "{}: expected context dim {} and parameter dim {}, got {} and {}",
                self.name,
                self.context_dim(),
                self.param_dim(),
                s.len(),
                xi.len()
            )));
        }
        match &self.spec {
            EnvSpec::Toy(t) => Ok(toy_return(s[0], xi[0], t)),
            EnvSpec::Puddle(p) => puddle_return(s[0], xi, p),
            EnvSpec::Arm(a) => arm_return(xi, s, a),
        }
    }

    /// `E_s[max_ξ R]`: dense grid for one-dimensional parameters, seeded
    /// cross-entropy search otherwise.
    pub fn oracle(&self, n_contexts: usize, seed: u64) -> Result<OracleResult> {
        match &self.spec {
            EnvSpec::Toy(_) => grid_oracle(self, n_contexts, 4001),
            _ => search_oracle(self, n_contexts, seed),
        }
    }
}
