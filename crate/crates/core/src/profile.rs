//! Piecewise-constant diffusivity with a single jump.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diffusivity `theta(x) = theta_minus` on `(0, tau)` and `theta_plus` on `[tau, 1)`,
/// together with the admissible band `[theta_lo, theta_hi]` both values live in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusivityProfile {
    theta_minus: f64,
    theta_plus: f64,
    tau: f64,
    theta_lo: f64,
    theta_hi: f64,
}

impl DiffusivityProfile {
    pub fn new(theta_minus: f64, theta_plus: f64, tau: f64, theta_lo: f64, theta_hi: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidParameter(format!("change point tau = {tau} must lie in (0, 1)")));
        }
        if !(theta_lo > 0.0 && theta_lo <= theta_hi && theta_hi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "band [{theta_lo}, {theta_hi}] must satisfy 0 < lo <= hi < inf"
            )));
        }
        for (name, value) in [("theta_minus", theta_minus), ("theta_plus", theta_plus)] {
            if !(value >= theta_lo && value <= theta_hi) {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {value} outside band [{theta_lo}, {theta_hi}]"
                )));
            }
        }
        Ok(Self {
            theta_minus,
            theta_plus,
            tau,
            theta_lo,
            theta_hi,
        })
    }

    /// Profile whose band is exactly `[min, max]` of the two values.
    pub fn with_tight_band(theta_minus: f64, theta_plus: f64, tau: f64) -> Result<Self> {
        Self::new(
            theta_minus,
            theta_plus,
            tau,
            theta_minus.min(theta_plus),
            theta_minus.max(theta_plus),
        )
    }

    /// Constant diffusivity; `tau` is kept only as bookkeeping.
    pub fn constant(theta: f64, tau: f64) -> Result<Self> {
        Self::new(theta, theta, tau, theta, theta)
    }

    pub fn theta_minus(&self) -> f64 {
        self.theta_minus
    }

    pub fn theta_plus(&self) -> f64 {
        self.theta_plus
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn theta_lo(&self) -> f64 {
        self.theta_lo
    }

    pub fn theta_hi(&self) -> f64 {
        self.theta_hi
    }

    /// Jump height `theta_plus - theta_minus`.
    pub fn eta(&self) -> f64 {
        self.theta_plus - self.theta_minus
    }

    pub fn theta_at(&self, x: f64) -> f64 {
        if x < self.tau {
            self.theta_minus
        } else {
            self.theta_plus
        }
    }

    pub fn theta_min(&self) -> f64 {
        self.theta_minus.min(self.theta_plus)
    }

    pub fn theta_max(&self) -> f64 {
        self.theta_minus.max(self.theta_plus)
    }

    /// Same jump location and band, values swapped across the jump.
    pub fn swapped(&self) -> Self {
        Self {
            theta_minus: self.theta_plus,
            theta_plus: self.theta_minus,
            ..*self
        }
    }
}
