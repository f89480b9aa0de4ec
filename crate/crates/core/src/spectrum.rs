//! Dirichlet eigenpairs of `-(theta u')'` on (0, 1) for a one-jump diffusivity.
//!
//! On each side of the jump an eigenfunction is a sine: `A sin(w_l x)` on
//! `(0, tau)` and `B sin(w_r (1 - x))` on `[tau, 1)`, with `w_l = sqrt(lambda / theta_minus)`
//! and `w_r = sqrt(lambda / theta_plus)`. Roots are isolated with a Prüfer-type
//! phase that increases strictly in `lambda` and crosses `m * pi` exactly at the
//! m-th eigenvalue, so no root can be skipped.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::DiffusivityProfile;

/// One eigenpair in piecewise-sine form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub lambda: f64,
    pub omega_left: f64,
    pub omega_right: f64,
    pub amp_left: f64,
    pub amp_right: f64,
}

impl Mode {
    pub fn value(&self, tau: f64, x: f64) -> f64 {
        if x < tau {
            self.amp_left * (self.omega_left * x).sin()
        } else {
            self.amp_right * (self.omega_right * (1.0 - x)).sin()
        }
    }

    pub fn derivative(&self, tau: f64, x: f64) -> f64 {
        if x < tau {
            self.amp_left * self.omega_left * (self.omega_left * x).cos()
        } else {
            -self.amp_right * self.omega_right * (self.omega_right * (1.0 - x)).cos()
        }
    }

    /// Left and right one-sided derivatives at the jump.
    pub fn derivatives_at_jump(&self, tau: f64) -> (f64, f64) {
        (
            self.amp_left * self.omega_left * (self.omega_left * tau).cos(),
            -self.amp_right * self.omega_right * (self.omega_right * (1.0 - tau)).cos(),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralDecomposition {
    profile: DiffusivityProfile,
    modes: Vec<Mode>,
}

impl SpectralDecomposition {
    pub fn profile(&self) -> &DiffusivityProfile {
        &self.profile
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.lambda).collect()
    }

    /// Mode `k` (1-based).
    pub fn mode(&self, k: usize) -> Result<&Mode> {
        if k == 0 || k > self.modes.len() {
            return Err(Error::IndexOutOfRange {
                index: k,
                len: self.modes.len(),
            });
        }
        Ok(&self.modes[k - 1])
    }

    /// Keep only the first `m` modes.
    pub fn truncated(&self, m: usize) -> Self {
        Self {
            profile: self.profile,
            modes: self.modes[..m.min(self.modes.len())].to_vec(),
        }
    }
}

fn frequencies(lambda: f64, profile: &DiffusivityProfile) -> (f64, f64) {
    (
        (lambda / profile.theta_minus()).sqrt(),
        (lambda / profile.theta_plus()).sqrt(),
    )
}

/// Matching determinant of the two-sided sine ansatz; vanishes at eigenvalues.
pub fn characteristic_value(lambda: f64, profile: &DiffusivityProfile) -> f64 {
    let (wl, wr) = frequencies(lambda, profile);
    let tau = profile.tau();
    let left = wl * tau;
    let right = wr * (1.0 - tau);
    profile.theta_minus() * wl * left.cos() * right.sin()
        + profile.theta_plus() * wr * right.cos() * left.sin()
}

/// Total phase accumulated across (0, 1); strictly increasing in `lambda`,
/// equal to `m * pi` at the m-th eigenvalue.
pub(crate) fn total_phase(lambda: f64, profile: &DiffusivityProfile) -> f64 {
    let (wl, wr) = frequencies(lambda, profile);
    let tau = profile.tau();
    let psi = wl * tau;
    let turns = (psi / PI).floor();
    let rest = psi - turns * PI;
    let rho = (profile.theta_minus() / profile.theta_plus()).sqrt();
    turns * PI + rest.sin().atan2(rho * rest.cos()) + wr * (1.0 - tau)
}

fn locate(profile: &DiffusivityProfile, m: usize, tol: f64) -> Result<f64> {
    let target = m as f64 * PI;
    let base = PI * PI * (m * m) as f64;
    let mut lo = profile.theta_min() * base * (1.0 - 1e-9);
    let mut hi = profile.theta_max() * base * (1.0 + 1e-9);
    if total_phase(lo, profile) > target || total_phase(hi, profile) < target {
        return Err(Error::BracketingFailure {
            mode: m,
            reason: format!("phase does not cross {m}*pi inside [{lo:e}, {hi:e}]"),
        });
    }
    for _ in 0..200 {
        if hi - lo <= tol * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if total_phase(mid, profile) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn build_mode(profile: &DiffusivityProfile, lambda: f64) -> Mode {
    let (wl, wr) = frequencies(lambda, profile);
    let tau = profile.tau();
    let (sl, cl) = (wl * tau).sin_cos();
    let (sr, cr) = (wr * (1.0 - tau)).sin_cos();
    // right amplitude relative to a unit left amplitude: match whichever of
    // value and flux is better conditioned
    let flux_l = profile.theta_minus() * wl * cl;
    let flux_r = -profile.theta_plus() * wr * cr;
    let ratio = if sr.abs() * profile.theta_plus() * wr >= flux_r.abs() {
        sl / sr
    } else {
        flux_l / flux_r
    };
    let int_l = 0.5 * tau - (2.0 * wl * tau).sin() / (4.0 * wl);
    let int_r = 0.5 * (1.0 - tau) - (2.0 * wr * (1.0 - tau)).sin() / (4.0 * wr);
    let amp_left = 1.0 / (int_l + ratio * ratio * int_r).sqrt();
    Mode {
        lambda,
        omega_left: wl,
        omega_right: wr,
        amp_left,
        amp_right: ratio * amp_left,
    }
}

/// First `mode_count` eigenpairs, ascending, each normalized in L2 with `e'(0) > 0`.
/// `tol` is the relative bracket width at which bisection stops.
pub fn decompose(profile: &DiffusivityProfile, mode_count: usize, tol: f64) -> Result<SpectralDecomposition> {
    if mode_count == 0 {
        return Err(Error::InvalidParameter("mode_count must be at least 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance {tol} must be positive")));
    }
    let mut modes = Vec::with_capacity(mode_count);
    for m in 1..=mode_count {
        let lambda = locate(profile, m, tol)?;
        let base = PI * PI * (m * m) as f64;
        let slack = 1.0 + 4.0 * tol;
        if lambda < profile.theta_lo() * base / slack || lambda > profile.theta_hi() * base * slack {
            return Err(Error::BracketingFailure {
                mode: m,
                reason: format!("eigenvalue {lambda:e} violates the comparison bounds"),
            });
        }
        if let Some(prev) = modes.last().map(|p: &Mode| p.lambda) {
            if lambda <= prev {
                return Err(Error::BracketingFailure {
                    mode: m,
                    reason: "eigenvalues not strictly increasing".into(),
                });
            }
        }
        modes.push(build_mode(profile, lambda));
    }
    Ok(SpectralDecomposition {
        profile: *profile,
        modes,
    })
}

/// Value of eigenfunction `k` (1-based) at `x`.
pub fn evaluate_eigenfunction(decomp: &SpectralDecomposition, k: usize, x: f64) -> Result<f64> {
    Ok(decomp.mode(k)?.value(decomp.profile.tau(), x))
}

/// Dirichlet solution `g` of `(theta g')' = f''` for `f` compactly supported in (0, 1).
/// The eigen-series `sum_k <f'', e_k> e_k / lambda_k` converges to `-g`.
pub fn inverse_apply_second_derivative<F: Fn(f64) -> f64>(profile: &DiffusivityProfile, f: F, x: f64) -> f64 {
    let (tm, tp, tau) = (profile.theta_minus(), profile.theta_plus(), profile.tau());
    let jump = profile.eta() / (tau * tp + (1.0 - tau) * tm) * f(tau);
    if x < tau {
        (f(x) - jump * x) / tm
    } else {
        (f(x) + jump * (1.0 - x)) / tp
    }
}
