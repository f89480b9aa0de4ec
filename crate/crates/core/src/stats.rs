//! Empirical summaries used by the Monte Carlo harness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear-interpolation quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    quantile_sorted(&sorted(values), p)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance.
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64
}

/// Median of the mid-distribution function `F(x) - P(X = x) / 2`, interpolated
/// linearly between distinct sample values. Equals the ordinary median when all
/// values are distinct, and moves continuously with the weights of tied values.
pub fn mid_median(values: &[f64]) -> f64 {
    let s = sorted(values);
    let n = s.len() as f64;
    let mut points: Vec<(f64, f64)> = Vec::new();
    let mut i = 0;
    while i < s.len() {
        let mut j = i;
        while j < s.len() && s[j] == s[i] {
            j += 1;
        }
        points.push(((i + j) as f64 / (2.0 * n), s[i]));
        i = j;
    }
    let first = points[0];
    if 0.5 <= first.0 {
        return first.1;
    }
    for w in points.windows(2) {
        let ((u0, x0), (u1, x1)) = (w[0], w[1]);
        if 0.5 <= u1 {
            return x0 + (0.5 - u0) / (u1 - u0) * (x1 - x0);
        }
    }
    points[points.len() - 1].1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub median: f64,
    pub mid_median: f64,
    pub iqr: f64,
    pub mean: f64,
}

impl ErrorSummary {
    pub fn of(values: &[f64]) -> Self {
        let s = sorted(values);
        ErrorSummary {
            median: quantile_sorted(&s, 0.5),
            mid_median: mid_median(values),
            iqr: quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25),
            mean: mean(values),
        }
    }
}

/// `sup |F_a - F_b|` between two empirical distribution functions.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// `sup |F_n - F|` against a continuous distribution function.
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let s = sorted(sample);
    let n = s.len() as f64;
    s.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
}

/// Least-squares fit of `log error` against `log delta`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 3 {
        return Err(Error::InvalidParameter(format!("slope fit needs at least 3 points, got {}", points.len())));
    }
    for (index, &(d, e)) in points.iter().enumerate() {
        if !(d > 0.0) {
            return Err(Error::NonPositiveError { index, value: d });
        }
        if !(e > 0.0) {
            return Err(Error::NonPositiveError { index, value: e });
        }
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (mx, my) = (mean(&xs), mean(&ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr = (rss / (points.len() - 2) as f64 / sxx).sqrt();
    Ok(SlopeFit { slope, stderr, intercept })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(median(&v), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        let s = ErrorSummary::of(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!((s.median, s.iqr, s.mean), (3.0, 2.0, 3.0));
    }

    #[test]
    fn mid_median_handles_ties() {
        assert_eq!(mid_median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(mid_median(&[5.0, 1.0, 3.0]), 3.0);
        assert_eq!(mid_median(&[2.0; 6]), 2.0);
        // half the mass at 0, half at 1: mid-distribution points (1/4, 0) and (3/4, 1)
        assert_eq!(mid_median(&[0.0, 0.0, 1.0, 1.0]), 0.5);
        // 3 zeros, 1 one: points (3/8, 0) and (7/8, 1)
        assert_eq!(mid_median(&[0.0, 0.0, 0.0, 1.0]), 0.25);
        let mut v = vec![0.0; 60];
        v.extend(vec![1.0; 40]);
        assert!(mid_median(&v) > 0.0 && median(&v) == 0.0);
    }

    #[test]
    fn ks_statistics() {
        assert_eq!(ks_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        assert!((ks_two_sample(&[1.0, 2.0, 3.0, 4.0], &[2.5]) - 0.5).abs() < 1e-15);
        let uniform: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_one_sample(&uniform, |x| x.clamp(0.0, 1.0)) - 0.005).abs() < 1e-12);
    }

    #[test]
    fn exact_power_laws_are_recovered() {
        let ds = [0.05, 0.025, 0.0125, 0.00625];
        let lin: Vec<(f64, f64)> = ds.iter().map(|&d| (d, 3.0 * d)).collect();
        let f = fit_loglog_slope(&lin).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12 && f.stderr < 1e-12);
        let pow: Vec<(f64, f64)> = ds.iter().map(|&d| (d, 0.7 * d.powf(1.5))).collect();
        assert!((fit_loglog_slope(&pow).unwrap().slope - 1.5).abs() < 1e-12);
    }

    #[test]
    fn slope_fit_rejects_bad_input() {
        assert!(matches!(
            fit_loglog_slope(&[(0.1, 1.0), (0.2, 0.0), (0.3, 1.0)]),
            Err(Error::NonPositiveError { index: 1, .. })
        ));
        assert!(fit_loglog_slope(&[(0.1, 1.0), (0.2, 1.0)]).is_err());
    }
}
