use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One bump of a toy surface. The ξ-centre follows the line
/// `ξ*(s) = xi_center + slope·(s − s_center)`; `sigma_s = None` makes the
/// bump a context-independent ridge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyMode {
    pub s_center: f64,
    pub xi_center: f64,
    #[serde(default)]
    pub slope: f64,
    pub sigma_s: Option<f64>,
    pub sigma_xi: f64,
    pub height: f64,
}

impl ToyMode {
    pub fn xi_track(&self, s: f64) -> f64 {
        self.xi_center + self.slope * (s - self.s_center)
    }

    fn value(&self, s: f64, xi: f64) -> f64 {
        let ds = match self.sigma_s {
            Some(sig) => (s - self.s_center).powi(2) / (2.0 * sig * sig),
            None => 0.0,
        };
        let dx = (xi - self.xi_track(s)).powi(2) / (2.0 * self.sigma_xi * self.sigma_xi);
        self.height * (-ds - dx).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModeSpec {
    pub modes: Vec<ToyMode>,
    pub floor: f64,
    pub context_box: (f64, f64),
    pub param_box: (f64, f64),
}

impl ToyModeSpec {
    /// Two bumps whose ξ-tracks have opposite slopes; the left one peaks at
    /// `s = −1`, the right one at `s = +1`.
    pub fn two_mode() -> Self {
        Self {
            modes: vec![
                ToyMode {
                    s_center: -1.0,
                    xi_center: 2.0,
                    slope: 0.5,
                    sigma_s: Some(1.0),
                    sigma_xi: 0.4,
                    height: 1.0,
                },
                ToyMode {
                    s_center: 1.0,
                    xi_center: -2.0,
                    slope: -0.5,
                    sigma_s: Some(1.0),
                    sigma_xi: 0.4,
                    height: 1.0,
                },
            ],
            floor: 0.0,
            context_box: (-1.0, 1.0),
            param_box: (-4.0, 4.0),
        }
    }

    /// Two-mode surface plus a flat ridge at `ξ = 0`.
    pub fn three_mode() -> Self {
        let mut spec = Self::two_mode();
        spec.modes.push(ToyMode {
            s_center: 0.0,
            xi_center: 0.0,
            slope: 0.0,
            sigma_s: None,
            sigma_xi: 0.4,
            height: 0.8,
        });
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let (slo, shi) = self.context_box;
        let (plo, phi) = self.param_box;
        if !(slo < shi) || !(plo < phi) {
            return Err(Error::config("toy boxes must have lo < hi"));
        }
        if self.modes.is_empty() {
            return Err(Error::config("toy surface needs at least one mode"));
        }
        for (i, m) in self.modes.iter().enumerate() {
            if !(m.height > 0.0) || !(m.sigma_xi > 0.0) || m.sigma_s.is_some_and(|v| !(v > 0.0)) {
                return Err(Error::config(format!(
                    "toy mode {i}: height and scales must be positive"
                )));
            }
            if m.s_center < slo || m.s_center > shi || m.xi_center < plo || m.xi_center > phi {
                return Err(Error::config(format!(
                    "toy mode {i}: centre outside the box"
                )));
            }
        }
        Ok(())
    }

    /// Index of the mode whose track is nearest to `xi` at context `s`.
    pub fn nearest_mode(&self, s: f64, xi: f64) -> usize {
        let mut best = 0;
        for (i, m) in self.modes.iter().enumerate() {
            if (xi - m.xi_track(s)).abs() < (xi - self.modes[best].xi_track(s)).abs() {
                best = i;
            }
        }
        best
    }
}

pub fn toy_return(s: f64, xi: f64, spec: &ToyModeSpec) -> f64 {
    spec.floor + spec.modes.iter().map(|m| m.value(s, xi)).sum::<f64>()
}
