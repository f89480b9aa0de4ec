//! The law of `argmin_h { W(h) + |h|/2 }` for a two-sided standard Brownian motion `W`.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Median of `|argmin|`, the root of `cdf(x) = 3/4`.
pub const MEDIAN_ABS_ARGMIN: f64 = 1.504_774_694_634_673_4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArgminLawConfig {
    /// Paths are simulated on `[-half_width, half_width]`.
    pub half_width: f64,
    pub step: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl ArgminLawConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.half_width >= 20.0) {
            return Err(Error::InvalidParameter(format!("half width {} is below 20", self.half_width)));
        }
        if !(self.step > 0.0 && self.step <= 1e-3 * self.half_width) {
            return Err(Error::InvalidParameter(format!(
                "step {} must lie in (0, 1e-3 * half width]",
                self.step
            )));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidParameter("need at least one replicate".into()));
        }
        Ok(())
    }
}

/// One grid minimizer; ties go to the smallest `|h|`, then the smallest `h`.
fn sample_one(steps: usize, step: f64, seed: u64, rep: u64) -> f64 {
    let mut rng = rng::stream(seed, rep);
    let sd = step.sqrt();
    let (mut left, mut right) = (0.0f64, 0.0f64);
    let (mut best, mut best_h) = (0.0f64, 0.0f64);
    for j in 1..=steps {
        let zl: f64 = StandardNormal.sample(&mut rng);
        let zr: f64 = StandardNormal.sample(&mut rng);
        left += sd * zl;
        right += sd * zr;
        let h = j as f64 * step;
        let drift = 0.5 * h;
        if left + drift < best {
            best = left + drift;
            best_h = -h;
        }
        if right + drift < best {
            best = right + drift;
            best_h = h;
        }
    }
    best_h
}

pub fn sample_argmin(config: &ArgminLawConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let steps = (config.half_width / config.step).round() as usize;
    Ok((0..config.replicates as u64)
        .into_par_iter()
        .map(|r| sample_one(steps, config.step, config.seed, r))
        .collect())
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Distribution function of the minimizer.
pub fn argmin_cdf(x: f64) -> f64 {
    if x < 0.0 {
        return 1.0 - argmin_cdf(-x);
    }
    if x > 400.0 {
        return 1.0;
    }
    let r = x.sqrt();
    1.0 + (x / (2.0 * std::f64::consts::PI)).sqrt() * (-x / 8.0).exp() - 0.5 * (x + 5.0) * std_normal_cdf(-0.5 * r)
        + 1.5 * x.exp() * std_normal_cdf(-1.5 * r)
}

/// `(eta^2 / delta^3) (T |K'|^2 / (2 theta_star)) (tau_hat - tau)`.
#[allow(clippy::too_many_arguments)]
pub fn normalize_change_point_errors(
    tau_hats: &[f64],
    tau: f64,
    theta_star: f64,
    kernel_d1_norm_sq: f64,
    horizon: f64,
    eta: f64,
    delta: f64,
) -> Result<Vec<f64>> {
    if !(delta > 0.0 && eta != 0.0 && theta_star > 0.0) {
        return Err(Error::InvalidParameter("normalization needs delta > 0, eta != 0, theta* > 0".into()));
    }
    let info = eta * eta * horizon * kernel_d1_norm_sq / (2.0 * theta_star * delta * delta);
    normalize_with_information(tau_hats, tau, info, delta)
}

/// `info / delta * (tau_hat - tau)`, with `info` the per-block information of the change-point contrast.
pub fn normalize_with_information(tau_hats: &[f64], tau: f64, info: f64, delta: f64) -> Result<Vec<f64>> {
    if !(info > 0.0 && delta > 0.0) {
        return Err(Error::InvalidParameter(format!("information {info} and delta {delta} must be positive")));
    }
    Ok(tau_hats.iter().map(|t| info / delta * (t - tau)).collect())
}

/// Per-block information `eta^2 E[B]^2 / E[QV]` of a contrast whose drift uses `b_mean`
/// while its martingale part has variance `qv_mean`.
pub fn effective_information(eta: f64, b_mean: f64, qv_mean: f64) -> f64 {
    eta * eta * b_mean * b_mean / qv_mean
}
