use serde::{Deserialize, Serialize};

use super::dmp::{dmp_rollout, DmpGains, DmpParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Puddle {
    pub x: (f64, f64),
    pub y: (f64, f64),
    /// Penalty per unit time spent inside.
    pub density: f64,
}

impl Puddle {
    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x.0 && x <= self.x.1 && y >= self.y.0 && y <= self.y.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuddleLayout {
    pub start: (f64, f64),
    pub goal_x: f64,
    /// Goal y-coordinates are drawn uniformly from this segment.
    pub goal_range: (f64, f64),
    /// Workspace box `(x_lo, x_hi, y_lo, y_hi)` used for validation.
    pub workspace: (f64, f64, f64, f64),
    pub puddles: Vec<Puddle>,
    pub c_len: f64,
    pub c_goal: f64,
    pub n_basis: usize,
    pub duration: f64,
    pub dt: f64,
    #[serde(default)]
    pub gains: DmpGains,
    /// Per-weight bounds of the initial uniform policy.
    pub weight_box: (f64, f64),
}

impl Default for PuddleLayout {
    fn default() -> Self {
        let c_pud = 10.0;
        Self {
            start: (0.0, 0.0),
            goal_x: 6.0,
            goal_range: (1.0, 5.0),
            workspace: (0.0, 6.0, -3.0, 7.0),
            // A staggered diagonal wall: passing under it suits low goals,
            // passing over it suits high goals.
            puddles: vec![
                Puddle {
                    x: (1.5, 2.5),
                    y: (0.3, 1.5),
                    density: c_pud,
                },
                Puddle {
                    x: (2.5, 3.5),
                    y: (0.6, 2.2),
                    density: c_pud,
                },
                Puddle {
                    x: (3.5, 4.5),
                    y: (0.9, 2.9),
                    density: c_pud,
                },
            ],
            c_len: 1.0,
            c_goal: 5.0,
            n_basis: 10,
            duration: 1.0,
            dt: 0.01,
            // A slow phase keeps the forcing term alive past mid-course, so
            // moderate weights can bend the path around the wall.
            gains: DmpGains {
                alpha_x: 2.0,
                ..DmpGains::default()
            },
            weight_box: (-400.0, 400.0),
        }
    }
}

impl PuddleLayout {
    pub fn validate(&self) -> Result<()> {
        let (xl, xh, yl, yh) = self.workspace;
        for (i, p) in self.puddles.iter().enumerate() {
            if !(p.x.0 < p.x.1 && p.y.0 < p.y.1) || p.density < 0.0 {
                return Err(Error::config(format!(
                    "puddle {i}: empty rectangle or negative density"
                )));
            }
            if p.x.0 < xl || p.x.1 > xh || p.y.0 < yl || p.y.1 > yh {
                return Err(Error::config(format!("puddle {i} leaves the workspace")));
            }
        }
        if !(self.goal_range.0 < self.goal_range.1) || !(self.weight_box.0 < self.weight_box.1) {
            return Err(Error::config(
                "puddle goal range and weight box need lo < hi",
            ));
        }
        if self.n_basis == 0 || !(self.dt > 0.0) || !(self.duration > 0.0) {
            return Err(Error::config(
                "puddle DMP needs basis functions and positive timing",
            ));
        }
        Ok(())
    }

    /// The `(x, y)` path for goal `s` and y-DMP weights `xi`.
    pub fn path(&self, s: f64, xi: &[f64]) -> Result<Vec<(f64, f64)>> {
        if xi.len() != self.n_basis {
            return Err(Error::invalid(format!(
                "puddle expects {} DMP weights, got {}",
                self.n_basis,
                xi.len()
            )));
        }
        let tr = dmp_rollout(&DmpParams {
            weights: xi.to_vec(),
            y0: self.start.1,
            goal: s,
            duration: self.duration,
            dt: self.dt,
            gains: self.gains,
        })?;
        let span = self.goal_x - self.start.0;
        Ok(tr
            .t
            .iter()
            .zip(&tr.y)
            .map(|(t, y)| (self.start.0 + span * (t / self.duration).min(1.0), *y))
            .collect())
    }
}

/// `−Σ_p density_p·(time in p) − c_len·length − c_goal·|y(T) − s|`.
pub fn puddle_return(s: f64, xi: &[f64], layout: &PuddleLayout) -> Result<f64> {
    let path = layout.path(s, xi)?;
    let mut penalty = 0.0;
    let mut length = 0.0;
    for k in 1..path.len() {
        let (x, y) = path[k];
        let (px, py) = path[k - 1];
        length += ((x - px).powi(2) + (y - py).powi(2)).sqrt();
        for p in &layout.puddles {
            if p.contains(x, y) {
                penalty += p.density * layout.dt;
            }
        }
    }
    let miss = (path.last().unwrap().1 - s).abs();
    let r = -penalty - layout.c_len * length - layout.c_goal * miss;
    Ok(if r.is_finite() { r } else { -1e6 })
}
