//! Rollout records and the append-only dataset they accumulate into.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One episode: context `s`, trajectory parameter `ξ` and its return `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub context: Vec<f64>,
    pub traj_param: Vec<f64>,
    pub ret: f64,
}

impl Sample {
    pub fn new(context: Vec<f64>, traj_param: Vec<f64>, ret: f64) -> Result<Self> {
        if !ret.is_finite() {
            return Err(Error::invalid(format!("non-finite return {ret}")));
        }
        Ok(Self {
            context,
            traj_param,
            ret,
        })
    }

    /// Joint point `[s; ξ]` used for density estimation.
    pub fn joint(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.context.len() + self.traj_param.len());
        v.extend_from_slice(&self.context);
        v.extend_from_slice(&self.traj_param);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    context_dim: usize,
    param_dim: usize,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(context_dim: usize, param_dim: usize) -> Self {
        Self {
            context_dim,
            param_dim,
            samples: Vec::new(),
        }
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn returns(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.ret).collect()
    }

    /// Appends `new` in order. Either every sample is accepted or none is.
    pub fn append(&mut self, new: Vec<Sample>) -> Result<()> {
        for (i, s) in new.iter().enumerate() {
            if s.context.len() != self.context_dim || s.traj_param.len() != self.param_dim {
                return Err(Error::invalid(format!(
                    "sample {i} has dims ({}, {}), dataset expects ({}, {})",
                    s.context.len(),
                    s.traj_param.len(),
                    self.context_dim,
                    self.param_dim
                )));
            }
            if !s.ret.is_finite() {
                return Err(Error::invalid(format!("sample {i} has non-finite return")));
            }
        }
        self.samples.extend(new);
        Ok(())
    }

    /// Consuming variant of [`Dataset::append`].
    pub fn appended(mut self, new: Vec<Sample>) -> Result<Self> {
        self.append(new)?;
        Ok(self)
    }

    /// The last `n` samples, or all of them if `n` exceeds the length.
    pub fn tail(&self, n: usize) -> &[Sample] {
        let start = self.samples.len().saturating_sub(n);
        &self.samples[start..]
    }
}
