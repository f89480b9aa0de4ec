//! Scalar signal-plus-white-noise analogue: `dY = theta(x) dx + sigma(x) dB(x)` on `[0, 1]`
//! with a jump of `theta` at `tau`, and the known-diffusivity change-point estimator.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub theta_minus: f64,
    pub theta_plus: f64,
    pub tau: f64,
    /// Measurement count; sets the noise level `n^{-3/2}`.
    pub sites: usize,
    /// Number of cells of the simulation grid.
    pub cells: usize,
    pub seed: u64,
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidParameter(format!("tau = {} must lie in (0, 1)", self.tau)));
        }
        if self.sites < 2 || self.cells < 2 {
            return Err(Error::InvalidParameter("need at least 2 sites and 2 cells".into()));
        }
        if !(self.theta_minus.is_finite() && self.theta_plus.is_finite()) {
            return Err(Error::InvalidParameter("diffusivities must be finite".into()));
        }
        Ok(())
    }

    pub fn eta(&self) -> f64 {
        self.theta_plus - self.theta_minus
    }

    /// Homoskedastic noise level `delta n^{-1/2}` with `delta = 1/n`.
    pub fn sigma(&self) -> f64 {
        (self.sites as f64).powf(-1.5)
    }

    /// Factor `eta^2 / sigma^2` turning `tau_hat - tau` into the limit-law scale.
    pub fn error_scale(&self) -> f64 {
        let s = self.sigma();
        self.eta() * self.eta() / (s * s)
    }

    fn cell_drift(&self, j: usize) -> f64 {
        let dx = 1.0 / self.cells as f64;
        let (a, b) = (j as f64 * dx, (j + 1) as f64 * dx);
        let left = (self.tau.min(b) - a).max(0.0);
        let right = (b - self.tau.max(a)).max(0.0);
        self.theta_minus * left + self.theta_plus * right
    }
}

/// Increments over the cells, with a noise level function evaluated at cell midpoints.
pub fn toy_simulate_with(config: &ToyConfig, rep: u64, sigma: &dyn Fn(f64) -> f64) -> Result<Vec<f64>> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, rep);
    let dx = 1.0 / config.cells as f64;
    let root = dx.sqrt();
    Ok((0..config.cells)
        .map(|j| {
            let z: f64 = StandardNormal.sample(&mut rng);
            config.cell_drift(j) + sigma((j as f64 + 0.5) * dx) * root * z
        })
        .collect())
}

pub fn toy_simulate(config: &ToyConfig, rep: u64) -> Result<Vec<f64>> {
    let s = config.sigma();
    toy_simulate_with(config, rep, &|_| s)
}

/// Cell boundary `j / cells` maximizing the known-diffusivity log-likelihood.
pub fn toy_estimate_known_theta_with(dy: &[f64], theta_minus: f64, theta_plus: f64, sigma: &dyn Fn(f64) -> f64) -> Result<f64> {
    if theta_minus == theta_plus {
        return Err(Error::InvalidParameter("known-diffusivity estimator needs a nonzero jump".into()));
    }
    let cells = dy.len();
    if cells < 2 {
        return Err(Error::InvalidParameter("need at least 2 cells".into()));
    }
    let dx = 1.0 / cells as f64;
    // gain of moving cell j from the right-hand to the left-hand group
    let eta = theta_plus - theta_minus;
    let quad = 0.5 * (theta_plus * theta_plus - theta_minus * theta_minus) * dx;
    let mut best = (0usize, 0.0f64);
    let mut run = 0.0;
    for (j, d) in dy.iter().enumerate() {
        let s = sigma((j as f64 + 0.5) * dx);
        run += (quad - eta * d) / (s * s);
        if run > best.1 {
            best = (j + 1, run);
        }
    }
    Ok(best.0 as f64 * dx)
}

pub fn toy_estimate_known_theta(dy: &[f64], theta_minus: f64, theta_plus: f64) -> Result<f64> {
    toy_estimate_known_theta_with(dy, theta_minus, theta_plus, &|_| 1.0)
}

/// `eta^2 sigma^{-2} (tau_hat - tau)` over `replicates` independent runs.
pub fn toy_rescaled_errors(config: &ToyConfig, replicates: usize) -> Result<Vec<f64>> {
    config.validate()?;
    let scale = config.error_scale();
    (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let dy = toy_simulate(config, r)?;
            let tau_hat = toy_estimate_known_theta(&dy, config.theta_minus, config.theta_plus)?;
            Ok(scale * (tau_hat - config.tau))
        })
        .collect()
}
