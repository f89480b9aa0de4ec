//! Profile-likelihood estimators of the jump block and the two diffusivities.
//!
//! Per site the modified log-likelihood is `l_i(theta) = theta A_i - theta^2 B_i / 2`.
//! Over a band `[lo, hi]` its maximizer for a group of sites is `clip(sum A / sum B)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether the block at the candidate change point gets its own diffusivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NuisanceMode {
    /// Sites `< k`, `= k` and `> k` each get a diffusivity.
    #[default]
    Separate,
    /// Block `k` is merged into the right-hand group.
    Merged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub theta_minus_hat: f64,
    pub theta_plus_hat: f64,
    pub theta_circ_hat: f64,
    pub k_hat: usize,
    pub tau_hat: f64,
    /// Profile log-likelihood `L(k)` for `k = 1..=n`.
    pub profile: Vec<f64>,
}

#[inline]
fn loglik(theta: f64, a: f64, b: f64) -> f64 {
    theta * a - 0.5 * theta * theta * b
}

/// Maximizer of `theta a - theta^2 b / 2` over `[lo, hi]` for `b > 0`.
pub fn clipped_ratio(a: f64, b: f64, lo: f64, hi: f64) -> f64 {
    (a / b).clamp(lo, hi)
}

struct Group {
    theta: f64,
    value: f64,
}

fn fit_group(a: f64, b: f64, count: usize, lo: f64, hi: f64, name: &'static str) -> Result<Group> {
    if count == 0 {
        return Ok(Group {
            theta: 0.5 * (lo + hi),
            value: 0.0,
        });
    }
    if !(b > 0.0) {
        return Err(Error::DegenerateBlock { group: name, value: b });
    }
    let theta = clipped_ratio(a, b, lo, hi);
    Ok(Group {
        theta,
        value: loglik(theta, a, b),
    })
}

fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

fn check_lengths(a: &[f64], b: &[f64], min: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidParameter(format!(
            "statistics have different lengths ({} and {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < min {
        return Err(Error::InvalidParameter(format!("need at least {min} sites, got {}", a.len())));
    }
    Ok(())
}

/// Joint estimator of `(theta_minus, theta_plus, theta_circ, k)` from per-site `A_i`, `B_i`.
///
/// `tau_hat` is `k_hat * delta`; with merged nuisance the right-hand group starts at
/// block `k_hat`, so `tau_hat` is `(k_hat - 1) * delta` instead.
pub fn estimate_simultaneous(a: &[f64], b: &[f64], band: (f64, f64), mode: NuisanceMode) -> Result<EstimateResult> {
    check_lengths(a, b, 3)?;
    let (lo, hi) = band;
    if !(lo > 0.0 && lo <= hi) {
        return Err(Error::InvalidParameter(format!("band [{lo}, {hi}] is not a positive interval")));
    }
    let n = a.len();
    let mut pa = vec![0.0; n + 1];
    let mut pb = vec![0.0; n + 1];
    for i in 0..n {
        pa[i + 1] = pa[i] + a[i];
        pb[i + 1] = pb[i] + b[i];
    }
    let mut profile = Vec::with_capacity(n);
    let mut fits = Vec::with_capacity(n);
    for k in 1..=n {
        let left = fit_group(pa[k - 1], pb[k - 1], k - 1, lo, hi, "left")?;
        let (circ, right) = match mode {
            NuisanceMode::Separate => (
                fit_group(a[k - 1], b[k - 1], 1, lo, hi, "change-point block")?,
                fit_group(pa[n] - pa[k], pb[n] - pb[k], n - k, lo, hi, "right")?,
            ),
            NuisanceMode::Merged => {
                let right = fit_group(pa[n] - pa[k - 1], pb[n] - pb[k - 1], n - k + 1, lo, hi, "right")?;
                (
                    Group {
                        theta: right.theta,
                        value: 0.0,
                    },
                    right,
                )
            }
        };
        profile.push(left.value + circ.value + right.value);
        fits.push((left.theta, right.theta, circ.theta));
    }
    let best = first_argmax(&profile);
    let (tm, tp, tc) = fits[best];
    let boundary = match mode {
        NuisanceMode::Separate => best + 1,
        NuisanceMode::Merged => best,
    };
    Ok(EstimateResult {
        theta_minus_hat: tm,
        theta_plus_hat: tp,
        theta_circ_hat: tc,
        k_hat: best + 1,
        tau_hat: boundary as f64 / n as f64,
        profile,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CusumResult {
    pub k_hat: usize,
    pub tau_hat: f64,
    /// `sum_{i<=k} l_i(theta_minus) + sum_{i>k} l_i(theta_plus)` for `k = 1..=n`.
    pub objective: Vec<f64>,
}

impl CusumResult {
    /// Objective re-centred at block `k_ref` (1-based).
    pub fn centered(&self, k_ref: usize) -> Result<Vec<f64>> {
        let base = *self.objective.get(k_ref.wrapping_sub(1)).ok_or(Error::IndexOutOfRange {
            index: k_ref,
            len: self.objective.len(),
        })?;
        Ok(self.objective.iter().map(|v| v - base).collect())
    }
}

/// Change-point estimator with both diffusivities known.
pub fn estimate_cusum_known_theta(a: &[f64], b: &[f64], theta_minus: f64, theta_plus: f64) -> Result<CusumResult> {
    check_lengths(a, b, 2)?;
    let n = a.len();
    let mut right: f64 = (0..n).map(|i| loglik(theta_plus, a[i], b[i])).sum();
    let mut left = 0.0;
    let mut objective = Vec::with_capacity(n);
    for i in 0..n {
        left += loglik(theta_minus, a[i], b[i]);
        right -= loglik(theta_plus, a[i], b[i]);
        objective.push(left + right);
    }
    // the right group is empty at k = n
    objective[n - 1] = left;
    let best = first_argmax(&objective);
    Ok(CusumResult {
        k_hat: best + 1,
        tau_hat: (best + 1) as f64 / n as f64,
        objective,
    })
}

/// Centred trace built from martingale parts: `Z_{k_bullet} = 0`,
/// `Z_k = eta sum_{k<i<=kb} M_i - eta^2/2 sum B_i + eta R` below, and
/// `Z_k = -eta sum_{kb<i<=k} M_i - eta^2/2 sum B_i` above, with
/// `R = A_kb - theta_minus B_kb - M_kb`.
pub fn centered_trace(a: &[f64], b: &[f64], m: &[f64], theta_minus: f64, theta_plus: f64, k_bullet: usize) -> Result<Vec<f64>> {
    check_lengths(a, b, 2)?;
    check_lengths(a, m, 2)?;
    let n = a.len();
    if k_bullet == 0 || k_bullet > n {
        return Err(Error::IndexOutOfRange { index: k_bullet, len: n });
    }
    let eta = theta_plus - theta_minus;
    let kb = k_bullet - 1;
    let r = a[kb] - theta_minus * b[kb] - m[kb];
    let mut z = vec![0.0; n];
    let (mut sm, mut sb) = (0.0, 0.0);
    for k in (0..kb).rev() {
        sm += m[k + 1];
        sb += b[k + 1];
        z[k] = eta * sm - 0.5 * eta * eta * sb + eta * r;
    }
    let (mut sm, mut sb) = (0.0, 0.0);
    for k in kb + 1..n {
        sm += m[k];
        sb += b[k];
        z[k] = -eta * sm - 0.5 * eta * eta * sb;
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn surrogate(theta: &[f64], b: &[f64]) -> Vec<f64> {
        theta.iter().zip(b).map(|(t, b)| t * b).collect()
    }

    #[test]
    fn noiseless_surrogate_is_recovered_exactly() {
        let n = 12;
        let b: Vec<f64> = (0..n).map(|i| 50.0 + i as f64).collect();
        let mut theta = vec![1.0; n];
        for t in theta.iter_mut().skip(5) {
            *t = 2.0;
        }
        theta[4] = 1.4;
        let a = surrogate(&theta, &b);
        let r = estimate_simultaneous(&a, &b, (0.5, 3.0), NuisanceMode::Separate).unwrap();
        assert_eq!(r.k_hat, 5);
        assert!((r.theta_minus_hat - 1.0).abs() < 1e-12);
        assert!((r.theta_plus_hat - 2.0).abs() < 1e-12);
        assert!((r.theta_circ_hat - 1.4).abs() < 1e-12);
        assert_eq!(r.tau_hat, 5.0 / 12.0);
        assert_eq!(r.profile.len(), n);
    }

    #[test]
    fn swapping_sides_swaps_estimates() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let n = 15;
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(40.0..60.0)).collect();
        let theta: Vec<f64> = (0..n).map(|i| if i < 6 { 1.0 } else { 2.0 }).collect();
        let a: Vec<f64> = surrogate(&theta, &b).iter().map(|v| v + rng.random_range(-3.0..3.0)).collect();
        let r = estimate_simultaneous(&a, &b, (0.5, 3.0), NuisanceMode::Separate).unwrap();
        let ar: Vec<f64> = a.iter().rev().copied().collect();
        let br: Vec<f64> = b.iter().rev().copied().collect();
        let s = estimate_simultaneous(&ar, &br, (0.5, 3.0), NuisanceMode::Separate).unwrap();
        assert_eq!(s.k_hat, n + 1 - r.k_hat);
        assert!((s.theta_minus_hat - r.theta_plus_hat).abs() < 1e-12);
        assert!((s.theta_plus_hat - r.theta_minus_hat).abs() < 1e-12);
        assert!((s.theta_circ_hat - r.theta_circ_hat).abs() < 1e-12);
    }

    #[test]
    fn empty_side_uses_band_midpoint() {
        let b = vec![10.0; 4];
        let a = surrogate(&[2.0, 1.0, 1.0, 1.0], &b);
        let r = estimate_simultaneous(&a, &b, (0.5, 3.0), NuisanceMode::Separate).unwrap();
        assert_eq!(r.k_hat, 1);
        assert_eq!(r.theta_minus_hat, 1.75);
        assert_eq!(r.theta_circ_hat, 2.0);
    }

    #[test]
    fn zero_quadratic_variation_is_rejected() {
        let b = vec![1.0, 0.0, 1.0, 1.0];
        let a = vec![1.0; 4];
        assert!(matches!(
            estimate_simultaneous(&a, &b, (0.5, 3.0), NuisanceMode::Separate),
            Err(Error::DegenerateBlock { .. })
        ));
        assert!(estimate_simultaneous(&a[..2], &b[..2], (0.5, 3.0), NuisanceMode::Separate).is_err());
    }

    #[test]
    fn merged_mode_reports_the_right_group_for_the_block() {
        let b = vec![10.0; 8];
        let a = surrogate(&[1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 2.0], &b);
        let r = estimate_simultaneous(&a, &b, (0.5, 3.0), NuisanceMode::Merged).unwrap();
        assert_eq!(r.k_hat, 4);
        assert_eq!(r.tau_hat, 3.0 / 8.0);
        assert_eq!(r.theta_circ_hat, r.theta_plus_hat);
        assert!((r.theta_plus_hat - 2.0).abs() < 1e-12);
    }

    #[test]
    fn profile_matches_brute_force_grid_search() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(17);
        let band = (0.5, 3.0);
        for _ in 0..5 {
            let n = 10;
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(5.0..15.0)).collect();
            let a: Vec<f64> = (0..n)
                .map(|i| b[i] * if i < 4 { 1.0 } else { 2.0 } + rng.random_range(-4.0..4.0))
                .collect();
            let r = estimate_simultaneous(&a, &b, band, NuisanceMode::Separate).unwrap();
            let grid: Vec<f64> = (0..=2500).map(|j| band.0 + j as f64 * 1e-3).collect();
            for k in 1..=n {
                // the objective separates, so a 3-D grid search is three 1-D ones
                let best = |range: std::ops::Range<usize>| -> f64 {
                    if range.is_empty() {
                        return 0.0;
                    }
                    let (sa, sb): (f64, f64) = range.map(|i| (a[i], b[i])).fold((0.0, 0.0), |s, v| (s.0 + v.0, s.1 + v.1));
                    grid.iter().map(|&t| loglik(t, sa, sb)).fold(f64::NEG_INFINITY, f64::max)
                };
                let brute = best(0..k - 1) + best(k - 1..k) + best(k..n);
                let total_b: f64 = b.iter().sum();
                assert!(r.profile[k - 1] >= brute - 1e-12);
                assert!(r.profile[k - 1] - brute <= 0.5 * 1e-6 * total_b);
            }
        }
    }

    #[test]
    fn cusum_noiseless_surrogate_lands_next_to_the_jump() {
        let n = 10;
        let b = vec![20.0; n];
        for mix in [1.1, 1.5, 1.9] {
            let mut theta = vec![1.0; n];
            for t in theta.iter_mut().skip(4) {
                *t = 2.0;
            }
            theta[3] = mix;
            let a = surrogate(&theta, &b);
            let r = estimate_cusum_known_theta(&a, &b, 1.0, 2.0).unwrap();
            assert!(r.k_hat == 3 || r.k_hat == 4, "mix {mix}: {}", r.k_hat);
            // exact deterministic objective: block 4 goes left iff its diffusivity is below the midpoint
            assert_eq!(r.k_hat, if mix < 1.5 { 4 } else { 3 });
        }
    }

    #[test]
    fn cusum_runs_without_a_jump() {
        let a = vec![3.0, 1.0, 2.0];
        let b = vec![2.0, 2.0, 2.0];
        let r = estimate_cusum_known_theta(&a, &b, 1.0, 1.0).unwrap();
        assert!((1..=3).contains(&r.k_hat));
    }

    #[test]
    fn centered_trace_is_invariant_under_drift_shifts() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        let n = 20;
        let kb = 8;
        let (tm, tp) = (1.0, 1.7);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(30.0..50.0)).collect();
        let m: Vec<f64> = (0..n).map(|_| rng.random_range(-6.0..6.0)).collect();
        let theta: Vec<f64> = (0..n).map(|i| if i + 1 < kb { tm } else if i + 1 == kb { 1.3 } else { tp }).collect();
        let a: Vec<f64> = (0..n).map(|i| theta[i] * b[i] + m[i]).collect();
        let direct = estimate_cusum_known_theta(&a, &b, tm, tp).unwrap();
        let z = centered_trace(&a, &b, &m, tm, tp, kb).unwrap();
        let centred = direct.centered(kb).unwrap();
        assert_eq!(z[kb - 1], 0.0);
        for k in 0..n {
            assert!((z[k] - centred[k]).abs() <= 1e-10 * (1.0 + centred[k].abs()), "k={}: {} vs {}", k + 1, z[k], centred[k]);
        }
        assert_eq!(first_argmax(&z) + 1, direct.k_hat);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn clipped_ratio_is_the_band_maximizer(a in -50.0f64..50.0, b in 0.01f64..20.0) {
            let (lo, hi) = (0.5, 3.0);
            let t = clipped_ratio(a, b, lo, hi);
            for j in 0..=100 {
                let s = lo + (hi - lo) * j as f64 / 100.0;
                prop_assert!(loglik(t, a, b) >= loglik(s, a, b) - 1e-12);
            }
        }

        #[test]
        fn centred_cusum_depends_on_data_only_through_martingale_parts(
            seed in 0u64..1000, kb in 1usize..=12, tm in 0.5f64..2.0, eta in -1.0f64..1.0, circ in 0.0f64..1.0
        ) {
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            let n = 12;
            let tp = tm + eta;
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(10.0..20.0)).collect();
            let m: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let drift = |i: usize| if i + 1 < kb { tm } else if i + 1 == kb { tm + circ * eta } else { tp };
            let a: Vec<f64> = (0..n).map(|i| drift(i) * b[i] + m[i]).collect();
            let z = centered_trace(&a, &b, &m, tm, tp, kb).unwrap();
            let direct = estimate_cusum_known_theta(&a, &b, tm, tp).unwrap().centered(kb).unwrap();
            for k in 0..n {
                prop_assert!((z[k] - direct[k]).abs() < 1e-9 * (1.0 + direct[k].abs()));
            }
        }
    }
}
