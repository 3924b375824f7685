use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disc {
    pub center: (f64, f64),
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmTask {
    pub lengths: Vec<f64>,
    /// Common joint limits `(lo, hi)`; also the initial uniform box.
    pub joint_limits: (f64, f64),
    pub obstacle: Disc,
    /// Clearance below which the hinge cost is active.
    pub clearance: f64,
    pub c_obs: f64,
    pub samples_per_link: usize,
    pub goal_radius: f64,
    /// Goal bearing range (radians) on the arc of `goal_radius`.
    pub goal_angles: (f64, f64),
}

impl Default for ArmTask {
    fn default() -> Self {
        Self {
            lengths: vec![1.0, 1.0, 1.0],
            joint_limits: (-2.8, 2.8),
            obstacle: Disc {
                center: (1.4, 0.0),
                radius: 0.35,
            },
            clearance: 0.1,
            c_obs: 100.0,
            samples_per_link: 10,
            goal_radius: 2.4,
            goal_angles: (-0.25, 0.25),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmPose {
    pub end: (f64, f64),
    /// True when some joint was outside its limits and got clamped.
    pub clamped: bool,
}

impl ArmTask {
    pub fn n_links(&self) -> usize {
        self.lengths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengths.is_empty() || self.lengths.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::config("arm link lengths must be positive"));
        }
        if !(self.joint_limits.0 < self.joint_limits.1)
            || !(self.goal_angles.0 <= self.goal_angles.1)
        {
            return Err(Error::config("arm limits and goal angles need lo < hi"));
        }
        if !(self.obstacle.radius > 0.0)
            || self.clearance < 0.0
            || self.c_obs < 0.0
            || self.samples_per_link == 0
        {
            return Err(Error::config("arm obstacle settings out of range"));
        }
        if self.lengths.iter().sum::<f64>() <= self.goal_radius {
            return Err(Error::config("goal arc is beyond the arm's reach"));
        }
        Ok(())
    }

    pub fn goal_at(&self, angle: f64) -> (f64, f64) {
        (
            self.goal_radius * angle.cos(),
            self.goal_radius * angle.sin(),
        )
    }

    fn clamp(&self, q: &[f64]) -> (Vec<f64>, bool) {
        let (lo, hi) = self.joint_limits;
        let c: Vec<f64> = q.iter().map(|v| v.clamp(lo, hi)).collect();
        let flagged = c.iter().zip(q).any(|(a, b)| a != b);
        (c, flagged)
    }

    /// Joint positions from the base to the end effector (`n_links + 1` points).
    pub fn joints(&self, q: &[f64]) -> Result<Vec<(f64, f64)>> {
        if q.len() != self.n_links() {
            return Err(Error::invalid(format!(
                "arm expects {} joint angles",
                self.n_links()
            )));
        }
        let (q, _) = self.clamp(q);
        let mut pts = vec![(0.0, 0.0)];
        let (mut x, mut y, mut a) = (0.0, 0.0, 0.0);
        for (qi, li) in q.iter().zip(&self.lengths) {
            a += qi;
            x += li * a.cos();
            y += li * a.sin();
            pts.push((x, y));
        }
        Ok(pts)
    }
}

pub fn arm_fk(q: &[f64], task: &ArmTask) -> Result<ArmPose> {
    let (_, clamped) = task.clamp(q);
    let pts = task.joints(q)?;
    if clamped {
        log::debug!("arm joint angles clamped to limits");
    }
    Ok(ArmPose {
        end: *pts.last().unwrap(),
        clamped,
    })
}

/// Sign of the second joint, used to tell the two arm postures apart.
pub fn elbow_sign(q: &[f64]) -> f64 {
    if q.len() > 1 && q[1] < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn hinge_cost(pts: &[(f64, f64)], task: &ArmTask) -> f64 {
    let (cx, cy) = task.obstacle.center;
    let m = task.samples_per_link;
    let mut cost = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        for k in 1..=m {
            let t = k as f64 / m as f64;
            let px = a.0 + t * (b.0 - a.0);
            let py = a.1 + t * (b.1 - a.1);
            let sd = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt() - task.obstacle.radius;
            let h = (task.clearance - sd).max(0.0);
            cost += h * h;
        }
    }
    task.c_obs * cost
}

/// `−‖fk(q) − goal‖ − C(q)`.
pub fn arm_return(q: &[f64], goal: &[f64], task: &ArmTask) -> Result<f64> {
    if goal.len() != 2 {
        return Err(Error::invalid("arm goal must be a 2-D point"));
    }
    let pts = task.joints(q)?;
    let end = pts.last().unwrap();
    let d = ((end.0 - goal[0]).powi(2) + (end.1 - goal[1]).powi(2)).sqrt();
    Ok(-d - hinge_cost(&pts, task))
}
