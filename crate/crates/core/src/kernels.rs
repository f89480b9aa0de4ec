//! Measurement kernels, the site grid and kernel/eigenfunction inner products.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::DiffusivityProfile;
use crate::quadrature::panel_rule;
use crate::spectrum::{Mode, SpectralDecomposition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum KernelFamily {
    /// `c (1 - 4x^2)^degree` on [-1/2, 1/2].
    Polynomial { degree: u32 },
    /// `c exp(-1 / (1 - 4x^2))` on (-1/2, 1/2).
    Bump,
}

impl Default for KernelFamily {
    fn default() -> Self {
        KernelFamily::Polynomial { degree: 3 }
    }
}

/// Unit-norm kernel supported in [-1/2, 1/2] and twice continuously differentiable on R.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementKernel {
    family: KernelFamily,
    scale: f64,
    d1_norm_sq: f64,
    d2_norm_sq: f64,
}

impl Default for MeasurementKernel {
    fn default() -> Self {
        Self::new(KernelFamily::default()).expect("cubic polynomial kernel is admissible")
    }
}

fn integrate_support<F: Fn(f64) -> f64>(f: F) -> f64 {
    panel_rule(-0.5, 0.5, 64).iter().map(|&(x, w)| w * f(x)).sum()
}

impl MeasurementKernel {
    pub fn new(family: KernelFamily) -> Result<Self> {
        let mut k = Self {
            family,
            scale: 1.0,
            d1_norm_sq: 0.0,
            d2_norm_sq: 0.0,
        };
        k.scale = match family {
            KernelFamily::Polynomial { degree } => {
                if degree < 3 {
                    return Err(Error::InvalidParameter(format!(
                        "polynomial kernel degree {degree} is not C2 at the support boundary (need >= 3)"
                    )));
                }
                // int_{-1}^{1} (1 - s^2)^m ds = 2 prod_{j=1}^{m} 2j / (2j + 1)
                let m = 2 * degree;
                let full = (1..=m).fold(2.0, |acc, j| acc * (2 * j) as f64 / (2 * j + 1) as f64);
                (0.5 * full).powf(-0.5)
            }
            KernelFamily::Bump => integrate_support(|x| k.value(x).powi(2)).powf(-0.5),
        };
        k.d1_norm_sq = integrate_support(|x| k.d1(x).powi(2));
        k.d2_norm_sq = integrate_support(|x| k.d2(x).powi(2));
        Ok(k)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    /// Normalizing constant `c`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `||K'||^2` in L2.
    pub fn d1_norm_sq(&self) -> f64 {
        self.d1_norm_sq
    }

    /// `||K''||^2` in L2.
    pub fn d2_norm_sq(&self) -> f64 {
        self.d2_norm_sq
    }

    pub fn value(&self, x: f64) -> f64 {
        let u = 1.0 - 4.0 * x * x;
        if u <= 0.0 {
            return 0.0;
        }
        match self.family {
            KernelFamily::Polynomial { degree } => self.scale * u.powi(degree as i32),
            KernelFamily::Bump => self.scale * (-1.0 / u).exp(),
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        let u = 1.0 - 4.0 * x * x;
        if u <= 0.0 {
            return 0.0;
        }
        match self.family {
            KernelFamily::Polynomial { degree } => {
                let p = degree as i32;
                self.scale * p as f64 * u.powi(p - 1) * (-8.0 * x)
            }
            KernelFamily::Bump => self.scale * (-1.0 / u).exp() * (-8.0 * x / (u * u)),
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        let u = 1.0 - 4.0 * x * x;
        if u <= 0.0 {
            return 0.0;
        }
        match self.family {
            KernelFamily::Polynomial { degree } => {
                let p = degree as i32;
                let pf = p as f64;
                self.scale * (pf * (pf - 1.0) * u.powi(p - 2) * 64.0 * x * x - 8.0 * pf * u.powi(p - 1))
            }
            KernelFamily::Bump => {
                let u2 = u * u;
                self.scale * (-1.0 / u).exp() * (64.0 * x * x / (u2 * u2) - 8.0 / u2 - 128.0 * x * x / (u2 * u))
            }
        }
    }

    fn cosine_transform<F: Fn(f64) -> f64>(f: F, nu: f64) -> f64 {
        let panels = 8usize.max((nu.abs() / 4.0).ceil() as usize);
        2.0 * panel_rule(0.0, 0.5, panels)
            .iter()
            .map(|&(x, w)| w * f(x) * (nu * x).cos())
            .sum::<f64>()
    }

    /// `int K(s) cos(nu s) ds`.
    pub fn transform(&self, nu: f64) -> f64 {
        Self::cosine_transform(|s| self.value(s), nu)
    }

    /// `int K''(s) cos(nu s) ds`.
    pub fn transform_d2(&self, nu: f64) -> f64 {
        Self::cosine_transform(|s| self.d2(s), nu)
    }
}

/// `n` equally spaced sites with disjoint kernel supports `[(i-1)/n, i/n]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementGrid {
    n: usize,
}

impl MeasurementGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("grid needs at least one site".into()));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn delta(&self) -> f64 {
        1.0 / self.n as f64
    }

    fn check(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.n {
            return Err(Error::IndexOutOfRange { index: i, len: self.n });
        }
        Ok(())
    }

    /// Site centre `(i - 1/2) / n`, 1-based.
    pub fn center(&self, i: usize) -> Result<f64> {
        self.check(i)?;
        Ok((i as f64 - 0.5) / self.n as f64)
    }

    /// Support `[(i-1)/n, i/n]` of site `i`.
    pub fn support(&self, i: usize) -> Result<(f64, f64)> {
        self.check(i)?;
        Ok(((i - 1) as f64 / self.n as f64, i as f64 / self.n as f64))
    }

    /// Index of the block whose support contains `tau`, i.e. `ceil(tau / delta)`.
    pub fn k_bullet(&self, tau: f64) -> usize {
        let n = self.n as f64;
        let mut k = ((tau * n).ceil() as usize).clamp(1, self.n);
        while k > 1 && tau <= (k - 1) as f64 / n {
            k -= 1;
        }
        while k < self.n && tau > k as f64 / n {
            k += 1;
        }
        k
    }

    /// Position of site `i` relative to the jump.
    pub fn side(&self, i: usize, tau: f64) -> Result<Side> {
        let (lo, hi) = self.support(i)?;
        Ok(if hi <= tau {
            Side::Left
        } else if lo >= tau {
            Side::Right
        } else {
            Side::Straddles
        })
    }

    /// `K_{delta,i}(x)` for the given kernel.
    pub fn scaled_value(&self, kernel: &MeasurementKernel, i: usize, x: f64) -> Result<f64> {
        let c = self.center(i)?;
        let d = self.delta();
        Ok(kernel.value((x - c) / d) / d.sqrt())
    }

    /// Second derivative of `K_{delta,i}` at `x`.
    pub fn scaled_laplacian(&self, kernel: &MeasurementKernel, i: usize, x: f64) -> Result<f64> {
        let c = self.center(i)?;
        let d = self.delta();
        Ok(kernel.d2((x - c) / d) * d.powf(-2.5))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Straddles,
}

/// Gauss–Legendre panels per half-support needed to resolve the fastest mode.
pub fn panels_per_half(decomp: &SpectralDecomposition, grid: &MeasurementGrid) -> usize {
    let lambda_max = decomp.modes().last().map_or(0.0, |m| m.lambda);
    let omega = (lambda_max / decomp.profile().theta_lo()).sqrt();
    8usize.max((4.0 * grid.delta() * omega / std::f64::consts::PI).ceil() as usize)
}

fn site_rule(grid: &MeasurementGrid, i: usize, tau: f64, panels_half: usize) -> Result<Vec<(f64, f64)>> {
    let (lo, hi) = grid.support(i)?;
    let mid = grid.center(i)?;
    let mut rule = Vec::new();
    for (a, b) in [(lo, mid), (mid, hi)] {
        if tau > a && tau < b {
            let left = ((panels_half as f64 * (tau - a) / (b - a)).ceil() as usize).max(1);
            let right = ((panels_half as f64 * (b - tau) / (b - a)).ceil() as usize).max(1);
            rule.extend(panel_rule(a, tau, left));
            rule.extend(panel_rule(tau, b, right));
        } else {
            rule.extend(panel_rule(a, b, panels_half));
        }
    }
    Ok(rule)
}

fn quadrature_coeffs(
    decomp: &SpectralDecomposition,
    grid: &MeasurementGrid,
    kernel: &MeasurementKernel,
    i: usize,
    modes: &[Mode],
    panels_half: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let tau = decomp.profile().tau();
    let rule = site_rule(grid, i, tau, panels_half)?;
    let kv: Vec<(f64, f64, f64)> = rule
        .iter()
        .map(|&(x, w)| {
            Ok((
                x,
                w * grid.scaled_value(kernel, i, x)?,
                w * grid.scaled_laplacian(kernel, i, x)?,
            ))
        })
        .collect::<Result<_>>()?;
    let mut a = Vec::with_capacity(modes.len());
    let mut b = Vec::with_capacity(modes.len());
    for m in modes {
        let (mut sa, mut sb) = (0.0, 0.0);
        for &(x, wk, wl) in &kv {
            let e = m.value(tau, x);
            sa += wk * e;
            sb += wl * e;
        }
        a.push(sa);
        b.push(sb);
    }
    Ok((a, b))
}

/// `a_k = <K_{delta,i}, e_k>` and `b_k = <Delta K_{delta,i}, e_k>` for every mode,
/// by composite Gauss–Legendre quadrature over the support of site `i`, with a
/// panel break at the jump.
pub fn kernel_eigen_coeffs(
    decomp: &SpectralDecomposition,
    grid: &MeasurementGrid,
    kernel: &MeasurementKernel,
    i: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let panels = panels_per_half(decomp, grid);
    let (a, b) = quadrature_coeffs(decomp, grid, kernel, i, decomp.modes(), panels)?;
    let last = decomp.mode_count();
    let check = &decomp.modes()[last - 1..];
    let (a2, b2) = quadrature_coeffs(decomp, grid, kernel, i, check, 2 * panels)?;
    let d = grid.delta();
    let b_scale = kernel.d2_norm_sq().sqrt() / (d * d);
    let discrepancy = ((a[last - 1] - a2[0]).abs()).max((b[last - 1] - b2[0]).abs() / b_scale);
    if discrepancy > 1e-10 {
        return Err(Error::QuadratureNonConvergence {
            site: i,
            mode: last,
            discrepancy,
        });
    }
    Ok((a, b))
}

/// Coefficients of every site, as `n x M` matrices.
#[derive(Debug, Clone)]
pub struct CoefficientTable {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
}

impl CoefficientTable {
    pub fn sites(&self) -> usize {
        self.a.nrows()
    }

    pub fn modes(&self) -> usize {
        self.a.ncols()
    }
}

/// Builds all site coefficients. Sites whose support lies on one side of the jump
/// use the kernel's cosine transform (the eigenfunction is a single sine there);
/// a site straddling the jump falls back to panel quadrature.
pub fn coefficient_table(
    decomp: &SpectralDecomposition,
    grid: &MeasurementGrid,
    kernel: &MeasurementKernel,
) -> Result<CoefficientTable> {
    let n = grid.n();
    let m = decomp.mode_count();
    let d = grid.delta();
    let profile: &DiffusivityProfile = decomp.profile();
    let tau = profile.tau();
    let mut a = Array2::zeros((n, m));
    let mut b = Array2::zeros((n, m));
    let transforms: Vec<[f64; 4]> = decomp
        .modes()
        .iter()
        .map(|mode| {
            let (nl, nr) = (mode.omega_left * d, mode.omega_right * d);
            [
                kernel.transform(nl),
                kernel.transform_d2(nl),
                kernel.transform(nr),
                kernel.transform_d2(nr),
            ]
        })
        .collect();
    for i in 1..=n {
        let x = grid.center(i)?;
        match grid.side(i, tau)? {
            Side::Straddles => {
                let (ai, bi) = kernel_eigen_coeffs(decomp, grid, kernel, i)?;
                a.row_mut(i - 1).assign(&ndarray::Array1::from(ai));
                b.row_mut(i - 1).assign(&ndarray::Array1::from(bi));
            }
            side => {
                for (k, (mode, t)) in decomp.modes().iter().zip(&transforms).enumerate() {
                    let (amp, phase, g, g2) = if side == Side::Left {
                        (mode.amp_left, (mode.omega_left * x).sin(), t[0], t[1])
                    } else {
                        (mode.amp_right, (mode.omega_right * (1.0 - x)).sin(), t[2], t[3])
                    };
                    a[[i - 1, k]] = amp * phase * g * d.sqrt();
                    b[[i - 1, k]] = amp * phase * g2 / (d * d.sqrt());
                }
            }
        }
    }
    Ok(CoefficientTable { a, b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::decompose;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn default_kernel_constants() {
        let k = MeasurementKernel::default();
        assert_relative_eq!(k.scale(), 1.712_488_594_852_532_1, max_relative = 1e-14);
        assert_relative_eq!(k.d1_norm_sq(), 15.6, max_relative = 1e-12);
        assert_relative_eq!(integrate_support(|x| k.value(x).powi(2)), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn kernel_and_derivatives_vanish_at_support_edge() {
        for fam in [KernelFamily::Polynomial { degree: 3 }, KernelFamily::Polynomial { degree: 5 }, KernelFamily::Bump] {
            let k = MeasurementKernel::new(fam).unwrap();
            for x in [-0.5, 0.5, 0.7, -3.0] {
                assert_eq!(k.value(x), 0.0);
                assert_eq!(k.d1(x), 0.0);
                assert_eq!(k.d2(x), 0.0);
            }
            assert_relative_eq!(integrate_support(|x| k.value(x).powi(2)), 1.0, epsilon = 1e-12);
        }
        assert!(MeasurementKernel::new(KernelFamily::Polynomial { degree: 2 }).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for fam in [KernelFamily::Polynomial { degree: 4 }, KernelFamily::Bump] {
            let k = MeasurementKernel::new(fam).unwrap();
            let h = 1e-5;
            for x in [-0.4, -0.1, 0.05, 0.33] {
                let fd1 = (k.value(x + h) - k.value(x - h)) / (2.0 * h);
                let fd2 = (k.d1(x + h) - k.d1(x - h)) / (2.0 * h);
                assert_relative_eq!(k.d1(x), fd1, max_relative = 1e-7, epsilon = 1e-9);
                assert_relative_eq!(k.d2(x), fd2, max_relative = 1e-7, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn scaled_kernels_have_unit_norm_and_disjoint_supports() {
        let grid = MeasurementGrid::new(10).unwrap();
        let k = MeasurementKernel::default();
        let rule = panel_rule(0.0, 1.0, 400);
        let inner = |i: usize, j: usize| -> f64 {
            rule.iter()
                .map(|&(x, w)| w * grid.scaled_value(&k, i, x).unwrap() * grid.scaled_value(&k, j, x).unwrap())
                .sum()
        };
        assert_relative_eq!(inner(3, 3), 1.0, epsilon = 1e-12);
        assert_eq!(inner(3, 4), 0.0);
        let grad: f64 = rule
            .iter()
            .map(|&(x, w)| {
                let c = grid.center(5).unwrap();
                let d = grid.delta();
                w * (k.d1((x - c) / d) * d.powf(-1.5)).powi(2)
            })
            .sum();
        assert_relative_eq!(grad, k.d1_norm_sq() / (grid.delta() * grid.delta()), max_relative = 1e-10);
        assert!(grid.center(0).is_err());
        assert!(grid.center(11).is_err());
    }

    #[test]
    fn k_bullet_contains_tau() {
        for n in [20usize, 40, 80, 160, 200, 7] {
            let g = MeasurementGrid::new(n).unwrap();
            for tau in [0.35, 0.4975, 1.0 / 3.0, 0.001, 0.999] {
                let k = g.k_bullet(tau);
                let (lo, hi) = g.support(k).unwrap();
                assert!(lo < tau && tau <= hi, "n={n} tau={tau} k={k}");
            }
        }
        assert_eq!(MeasurementGrid::new(20).unwrap().k_bullet(0.35), 7);
    }

    #[test]
    fn constant_diffusivity_matches_fine_quadrature() {
        let p = DiffusivityProfile::constant(1.0, 0.5).unwrap();
        let grid = MeasurementGrid::new(10).unwrap();
        let k = MeasurementKernel::default();
        let d = decompose(&p, 100, 1e-14).unwrap();
        let (a, _) = kernel_eigen_coeffs(&d, &grid, &k, 4).unwrap();
        // independent midpoint rule with 10^6 points over the support
        let (lo, hi) = grid.support(4).unwrap();
        let pts = 1_000_000;
        let h = (hi - lo) / pts as f64;
        for kk in [1usize, 7, 40, 100] {
            let mut s = 0.0;
            for j in 0..pts {
                let x = lo + (j as f64 + 0.5) * h;
                s += grid.scaled_value(&k, 4, x).unwrap() * 2f64.sqrt() * (kk as f64 * std::f64::consts::PI * x).sin();
            }
            assert!((a[kk - 1] - s * h).abs() < 1e-9, "mode {kk}");
        }
    }

    #[test]
    fn fast_table_matches_direct_quadrature() {
        let p = DiffusivityProfile::with_tight_band(1.0, 2.0, 0.43).unwrap();
        let grid = MeasurementGrid::new(12).unwrap();
        let k = MeasurementKernel::default();
        let d = decompose(&p, 120, 1e-14).unwrap();
        let table = coefficient_table(&d, &grid, &k).unwrap();
        for i in 1..=12 {
            let (a, b) = kernel_eigen_coeffs(&d, &grid, &k, i).unwrap();
            for m in 0..120 {
                assert!((table.a[[i - 1, m]] - a[m]).abs() < 1e-12);
                assert!((table.b[[i - 1, m]] - b[m]).abs() < 1e-12 * 144.0 * 30.0);
            }
        }
    }

    #[test]
    fn laplacian_coefficients_off_the_jump_follow_the_eigenvalue() {
        let p = DiffusivityProfile::with_tight_band(1.0, 4.0, 0.43).unwrap();
        let grid = MeasurementGrid::new(10).unwrap();
        let k = MeasurementKernel::default();
        let d = decompose(&p, 100, 1e-14).unwrap();
        let kb = grid.k_bullet(p.tau());
        for i in 1..=10 {
            let (a, b) = kernel_eigen_coeffs(&d, &grid, &k, i).unwrap();
            let theta = p.theta_at(grid.center(i).unwrap());
            let residual: f64 = d
                .modes()
                .iter()
                .zip(a.iter().zip(&b))
                .map(|(m, (a, b))| (b + m.lambda / theta * a).abs())
                .fold(0.0, f64::max);
            if i == kb {
                assert!(residual > 1e-3, "jump block residual {residual}");
            } else {
                assert!(residual < 1e-8, "site {i} residual {residual}");
            }
        }
    }

    #[test]
    fn parseval_tail_is_small_with_twenty_modes_per_site() {
        let p = DiffusivityProfile::with_tight_band(1.0, 2.0, 0.35).unwrap();
        let grid = MeasurementGrid::new(20).unwrap();
        let k = MeasurementKernel::default();
        let d = decompose(&p, 400, 1e-13).unwrap();
        let t = coefficient_table(&d, &grid, &k).unwrap();
        for row in t.a.rows() {
            let s: f64 = row.iter().map(|v| v * v).sum();
            assert!(1.0 - s < 1e-4 && s < 1.0 + 1e-10, "sum {s}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn transform_of_second_derivative_is_minus_nu_squared(nu in 0.0f64..80.0) {
            let k = MeasurementKernel::default();
            let lhs = k.transform_d2(nu);
            let rhs = -nu * nu * k.transform(nu);
            prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + nu * nu));
        }
    }
}
