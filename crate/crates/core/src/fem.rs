//! Linear finite elements for the same Dirichlet eigenproblem; an independent check
//! on the semi-analytic spectrum.

use crate::error::{Error, Result};
use crate::profile::DiffusivityProfile;

/// Generalized eigenpairs `K v = lambda M v` of the P1 discretization.
#[derive(Debug, Clone)]
pub struct FemSpectrum {
    /// Interior node coordinates.
    pub nodes: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    /// Nodal values at interior nodes, mass-normalized, positive at the first node.
    pub vectors: Vec<Vec<f64>>,
}

impl FemSpectrum {
    /// Piecewise-linear interpolation of mode `k` (1-based) at `x`.
    pub fn evaluate(&self, k: usize, x: f64) -> Result<f64> {
        let v = self.vectors.get(k.wrapping_sub(1)).ok_or(Error::IndexOutOfRange {
            index: k,
            len: self.vectors.len(),
        })?;
        let n = self.nodes.len();
        let node = |i: usize| if i == 0 { 0.0 } else if i == n + 1 { 1.0 } else { self.nodes[i - 1] };
        let val = |i: usize| if i == 0 || i == n + 1 { 0.0 } else { v[i - 1] };
        let upper = self.nodes.partition_point(|&z| z <= x) + 1;
        let (i0, i1) = (upper - 1, upper.min(n + 1));
        if i0 == i1 {
            return Ok(val(i0));
        }
        let s = (x - node(i0)) / (node(i1) - node(i0));
        Ok((1.0 - s) * val(i0) + s * val(i1))
    }
}

struct Tridiag {
    diag: Vec<f64>,
    off: Vec<f64>,
}

fn mesh(profile: &DiffusivityProfile, cells: usize) -> Vec<f64> {
    // element size proportional to the local wavelength sqrt(theta)
    let tau = profile.tau();
    let wl = tau / profile.theta_minus().sqrt();
    let wr = (1.0 - tau) / profile.theta_plus().sqrt();
    let left = ((cells as f64 * wl / (wl + wr)).round() as usize).clamp(1, cells - 1);
    let right = cells - left;
    let mut x = Vec::with_capacity(cells + 1);
    for j in 0..=left {
        x.push(tau * j as f64 / left as f64);
    }
    for j in 1..=right {
        x.push(tau + (1.0 - tau) * j as f64 / right as f64);
    }
    x
}

fn assemble(profile: &DiffusivityProfile, x: &[f64]) -> (Tridiag, Tridiag) {
    let interior = x.len() - 2;
    let mut k = Tridiag {
        diag: vec![0.0; interior],
        off: vec![0.0; interior.saturating_sub(1)],
    };
    let mut m = Tridiag {
        diag: vec![0.0; interior],
        off: vec![0.0; interior.saturating_sub(1)],
    };
    for e in 0..x.len() - 1 {
        let h = x[e + 1] - x[e];
        let theta = profile.theta_at(0.5 * (x[e] + x[e + 1]));
        let (kd, ko) = (theta / h, -theta / h);
        let (md, mo) = (h / 3.0, h / 6.0);
        // element couples global nodes e and e+1; interior index is node - 1
        for (node, is_interior) in [(e, e >= 1 && e <= interior), (e + 1, e < interior)] {
            if is_interior {
                k.diag[node - 1] += kd;
                m.diag[node - 1] += md;
            }
        }
        if e >= 1 && e < interior {
            k.off[e - 1] += ko;
            m.off[e - 1] += mo;
        }
    }
    (k, m)
}

/// Number of generalized eigenvalues strictly below `sigma`, by Sylvester inertia
/// of the LDL^T factorization of `K - sigma M`.
fn count_below(k: &Tridiag, m: &Tridiag, sigma: f64) -> usize {
    let mut count = 0;
    let mut d_prev = 1.0;
    let mut b_prev = 0.0;
    for i in 0..k.diag.len() {
        let a = k.diag[i] - sigma * m.diag[i];
        let mut d = if i == 0 { a } else { a - b_prev * b_prev / d_prev };
        if d == 0.0 {
            d = -f64::EPSILON * a.abs().max(1.0);
        }
        if d < 0.0 {
            count += 1;
        }
        d_prev = d;
        if i < k.off.len() {
            b_prev = k.off[i] - sigma * m.off[i];
        }
    }
    count
}

/// Bisection on the inertia count until `hi - lo <= rel_tol * hi`, starting from `lo`.
fn bisect_eigenvalue(k: &Tridiag, m: &Tridiag, index: usize, lo: f64, hi_start: f64, rel_tol: f64) -> (f64, f64) {
    let mut lo = lo;
    let mut hi = hi_start.max(lo * 1.5);
    while count_below(k, m, hi) < index {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= rel_tol * hi {
            break;
        }
        if count_below(k, m, mid) >= index {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (lo, hi)
}

fn rayleigh_quotient(k: &Tridiag, m: &Tridiag, v: &[f64]) -> f64 {
    let kv: f64 = tri_mul(k, v).iter().zip(v).map(|(a, b)| a * b).sum();
    let mv: f64 = tri_mul(m, v).iter().zip(v).map(|(a, b)| a * b).sum();
    kv / mv
}

/// Eigenpair number `index`: a coarse inertia bracket refined by Rayleigh quotient
/// iteration, confirmed by the inertia count and otherwise finished by bisection.
fn eigenpair(k: &Tridiag, m: &Tridiag, index: usize, lo: f64, guess: f64) -> Result<(f64, Vec<f64>)> {
    let n = k.diag.len();
    let (blo, bhi) = bisect_eigenvalue(k, m, index, lo, guess, 1e-4);
    let mut sigma = 0.5 * (blo + bhi);
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
    for step in 0..8 {
        let rhs = tri_mul(m, &v);
        let Ok(y) = shifted_solve(k, m, sigma, &rhs) else { break };
        let norm = m_norm(m, &y);
        if !(norm > 0.0 && norm.is_finite()) {
            break;
        }
        v = y.into_iter().map(|z| z / norm).collect();
        if step < 2 {
            continue;
        }
        let next = rayleigh_quotient(k, m, &v);
        let done = (next - sigma).abs() <= 1e-13 * next;
        sigma = next;
        if done {
            break;
        }
    }
    let confirmed = sigma > blo && sigma < bhi && count_below(k, m, sigma * (1.0 - 1e-6)) < index && count_below(k, m, sigma * (1.0 + 1e-6)) >= index;
    let lambda = if confirmed {
        sigma
    } else {
        let (a, b) = bisect_eigenvalue(k, m, index, blo, bhi, 1e-15);
        let lambda = 0.5 * (a + b);
        let shift = lambda * (1.0 + 1e-11);
        for _ in 0..3 {
            let rhs = tri_mul(m, &v);
            v = shifted_solve(k, m, shift, &rhs)?;
            let norm = m_norm(m, &v);
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::SingularMatrix(format!("inverse iteration broke down for mode {index}")));
            }
            v.iter_mut().for_each(|z| *z /= norm);
        }
        lambda
    };
    if v[0] < 0.0 {
        v.iter_mut().for_each(|z| *z = -*z);
    }
    Ok((lambda, v))
}

fn tri_mul(t: &Tridiag, v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let mut s = t.diag[i] * v[i];
            if i > 0 {
                s += t.off[i - 1] * v[i - 1];
            }
            if i + 1 < n {
                s += t.off[i] * v[i + 1];
            }
            s
        })
        .collect()
}

/// Solves the symmetric tridiagonal system `(K - sigma M) y = r` by elimination.
fn shifted_solve(k: &Tridiag, m: &Tridiag, sigma: f64, r: &[f64]) -> Result<Vec<f64>> {
    let n = r.len();
    let mut c = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut prev_c = 0.0;
    let mut prev_y = 0.0;
    for i in 0..n {
        let a = k.diag[i] - sigma * m.diag[i];
        let lower = if i > 0 { k.off[i - 1] - sigma * m.off[i - 1] } else { 0.0 };
        let piv = a - lower * prev_c;
        if piv == 0.0 || !piv.is_finite() {
            return Err(Error::SingularMatrix(format!("zero pivot at row {i} for shift {sigma:e}")));
        }
        let upper = if i + 1 < n { k.off[i] - sigma * m.off[i] } else { 0.0 };
        c[i] = upper / piv;
        y[i] = (r[i] - lower * prev_y) / piv;
        prev_c = c[i];
        prev_y = y[i];
    }
    for i in (0..n.saturating_sub(1)).rev() {
        y[i] -= c[i] * y[i + 1];
    }
    Ok(y)
}

fn m_norm(m: &Tridiag, v: &[f64]) -> f64 {
    tri_mul(m, v).iter().zip(v).map(|(a, b)| a * b).sum::<f64>().sqrt()
}

/// First `mode_count` generalized eigenpairs on a mesh of `cells` elements that has
/// a node at the jump.
pub fn fem_oracle(profile: &DiffusivityProfile, cells: usize, mode_count: usize) -> Result<FemSpectrum> {
    if mode_count == 0 || cells < 10 * mode_count {
        return Err(Error::SingularMatrix(format!(
            "{cells} cells cannot resolve {mode_count} modes (need at least ten per mode)"
        )));
    }
    let x = mesh(profile, cells);
    let (k, m) = assemble(profile, &x);
    let mut eigenvalues = Vec::with_capacity(mode_count);
    let mut vectors = Vec::with_capacity(mode_count);
    let mut previous = 0.0;
    for index in 1..=mode_count {
        let guess = 2.0 * profile.theta_max() * (std::f64::consts::PI * index as f64).powi(2);
        let (lambda, v) = eigenpair(&k, &m, index, previous, guess)?;
        previous = lambda;
        eigenvalues.push(lambda);
        vectors.push(v);
    }
    Ok(FemSpectrum {
        nodes: x[1..x.len() - 1].to_vec(),
        eigenvalues,
        vectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn constant_profiles_match_closed_form() {
        let p = DiffusivityProfile::constant(1.0, 0.5).unwrap();
        let s = fem_oracle(&p, 10_000, 2).unwrap();
        assert_relative_eq!(s.eigenvalues[0], PI * PI, max_relative = 1e-6);
        let q = DiffusivityProfile::constant(2.0, 0.37).unwrap();
        let s = fem_oracle(&q, 10_000, 2).unwrap();
        assert_relative_eq!(s.eigenvalues[1], 8.0 * PI * PI, max_relative = 1e-6);
    }

    #[test]
    fn eigenvectors_are_mass_normalized_sines() {
        let p = DiffusivityProfile::constant(1.0, 0.5).unwrap();
        let s = fem_oracle(&p, 4_000, 3).unwrap();
        for k in 1..=3 {
            for x in [0.1, 0.45, 0.9] {
                let want = 2f64.sqrt() * (k as f64 * PI * x).sin();
                assert!((s.evaluate(k, x).unwrap() - want).abs() < 1e-4);
            }
        }
        assert!(s.evaluate(4, 0.5).is_err());
        assert_eq!(s.evaluate(1, 0.0).unwrap(), 0.0);
        assert_eq!(s.evaluate(1, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn too_coarse_mesh_is_rejected() {
        let p = DiffusivityProfile::constant(1.0, 0.5).unwrap();
        assert!(matches!(fem_oracle(&p, 50, 10), Err(Error::SingularMatrix(_))));
    }

    #[test]
    fn mesh_has_a_node_at_the_jump() {
        let p = DiffusivityProfile::with_tight_band(1.0, 4.0, 1.0 / 3.0).unwrap();
        let x = mesh(&p, 999);
        assert!(x.iter().any(|&z| z == p.tau()));
        assert_eq!(x.len(), 1000);
    }
}
