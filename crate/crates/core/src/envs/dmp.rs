use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmpGains {
    pub alpha_z: f64,
    pub beta_z: f64,
    pub alpha_x: f64,
}

impl Default for DmpGains {
    fn default() -> Self {
        Self {
            alpha_z: 25.0,
            beta_z: 6.25,
            alpha_x: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmpParams {
    pub weights: Vec<f64>,
    pub y0: f64,
    pub goal: f64,
    pub duration: f64,
    pub dt: f64,
    #[serde(default)]
    pub gains: DmpGains,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmpTrajectory {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub yd: Vec<f64>,
}

impl DmpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.duration > 0.0) {
            return Err(Error::invalid("DMP dt and duration must be positive"));
        }
        if self.weights.is_empty() {
            return Err(Error::invalid("DMP needs at least one basis weight"));
        }
        let g = &self.gains;
        if (g.beta_z - g.alpha_z / 4.0).abs() > 1e-12 * g.alpha_z.abs().max(1.0) {
            return Err(Error::invalid(
                "DMP gains must be critically damped (β_z = α_z/4)",
            ));
        }
        Ok(())
    }
}

/// Gaussian basis over the canonical phase: centres spaced evenly in time,
/// widths set from the gap to the next centre.
fn basis(n: usize, alpha_x: f64) -> (Vec<f64>, Vec<f64>) {
    let c: Vec<f64> = (0..n)
        .map(|i| {
            let frac = if n > 1 {
                i as f64 / (n - 1) as f64
            } else {
                0.0
            };
            (-alpha_x * frac).exp()
        })
        .collect();
    let mut h = vec![1.0; n];
    for i in 0..n {
        let gap = if i + 1 < n {
            c[i] - c[i + 1]
        } else if n > 1 {
            c[n - 2] - c[n - 1]
        } else {
            1.0
        };
        h[i] = 1.0 / (gap * gap);
    }
    (c, h)
}

/// Euler integration of a discrete DMP with `τ = duration`.
pub fn dmp_rollout(p: &DmpParams) -> Result<DmpTrajectory> {
    p.validate()?;
    let DmpGains {
        alpha_z,
        beta_z,
        alpha_x,
    } = p.gains;
    let tau = p.duration;
    let steps = (p.duration / p.dt).round() as usize;
    let (c, h) = basis(p.weights.len(), alpha_x);
    let amp = p.goal - p.y0;
    let (mut x, mut y, mut z) = (1.0f64, p.y0, 0.0f64);
    let mut out = DmpTrajectory {
        t: Vec::with_capacity(steps + 1),
        y: Vec::with_capacity(steps + 1),
        yd: Vec::with_capacity(steps + 1),
    };
    out.t.push(0.0);
    out.y.push(y);
    out.yd.push(0.0);
    for k in 1..=steps {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..c.len() {
            let psi = (-h[i] * (x - c[i]) * (x - c[i])).exp();
            num += psi * p.weights[i];
            den += psi;
        }
        let f = if den > 1e-300 {
            num / den * x * amp
        } else {
            0.0
        };
        let zd = (alpha_z * (beta_z * (p.goal - y) - z) + f) / tau;
        let yd = z / tau;
        let xd = -alpha_x * x / tau;
        y += yd * p.dt;
        z += zd * p.dt;
        x += xd * p.dt;
        out.t.push(k as f64 * p.dt);
        out.y.push(y);
        out.yd.push(z / tau);
    }
    Ok(out)
}
