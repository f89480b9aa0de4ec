//! Per-site sufficient statistics and diagnostics built from sampled measurements.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{BlockSink, ObservationSet};

/// Time quadrature used for `int XD^2 dt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeQuadrature {
    /// `sum_j XD(t_j) int_{t_j}^{t_{j+1}} XD ds`: pairs with the Itô sum so that
    /// `A = theta B + M` holds exactly off the jump block, at any step size.
    #[default]
    Matched,
    Trapezoid,
    LeftPoint,
}

impl std::str::FromStr for TimeQuadrature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matched" => Ok(Self::Matched),
            "trapezoid" => Ok(Self::Trapezoid),
            "left-point" | "left" => Ok(Self::LeftPoint),
            other => Err(Error::InvalidParameter(format!("unknown quadrature '{other}'"))),
        }
    }
}

/// `A_i = int XD dX` (left-point Itô sums) and several quadratures of `int XD^2 dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockFunctionals {
    pub horizon: f64,
    pub a: Vec<f64>,
    pub b_trapezoid: Vec<f64>,
    pub b_left: Vec<f64>,
    pub b_matched: Option<Vec<f64>>,
    /// `M_i = int XD dB_i`, when Brownian increments were recorded.
    pub m: Option<Vec<f64>>,
}

impl BlockFunctionals {
    pub fn sites(&self) -> usize {
        self.a.len()
    }

    pub fn b(&self, quadrature: TimeQuadrature) -> Result<&[f64]> {
        match quadrature {
            TimeQuadrature::Trapezoid => Ok(&self.b_trapezoid),
            TimeQuadrature::LeftPoint => Ok(&self.b_left),
            TimeQuadrature::Matched => self
                .b_matched
                .as_deref()
                .ok_or_else(|| Error::InvalidParameter("step integrals of XD were not recorded".into())),
        }
    }

    pub fn martingale(&self) -> Result<&[f64]> {
        self.m.as_deref().ok_or(Error::MissingBrownianPath)
    }
}

/// Streaming accumulator; consumes measurement blocks in time order.
#[derive(Debug, Clone)]
pub struct FunctionalsAccumulator {
    dt: f64,
    horizon: f64,
    prev_x: Vec<f64>,
    prev_xd: Vec<f64>,
    a: Vec<f64>,
    b_trapezoid: Vec<f64>,
    b_left: Vec<f64>,
    b_matched: Vec<f64>,
    m: Vec<f64>,
    has_q: bool,
    has_db: bool,
}

impl FunctionalsAccumulator {
    /// Starts from `X = XD = 0` at time zero.
    pub fn new(sites: usize, dt: f64, horizon: f64) -> Self {
        Self {
            dt,
            horizon,
            prev_x: vec![0.0; sites],
            prev_xd: vec![0.0; sites],
            a: vec![0.0; sites],
            b_trapezoid: vec![0.0; sites],
            b_left: vec![0.0; sites],
            b_matched: vec![0.0; sites],
            m: vec![0.0; sites],
            has_q: true,
            has_db: true,
        }
    }

    /// Columns of `x`/`xd` are the samples after each step; `q`/`db` the step integrals.
    pub fn push(&mut self, x: ArrayView2<f64>, xd: ArrayView2<f64>, q: Option<ArrayView2<f64>>, db: Option<ArrayView2<f64>>) {
        self.has_q &= q.is_some();
        self.has_db &= db.is_some();
        let dt = self.dt;
        for i in 0..x.nrows() {
            let (xr, xdr) = (x.row(i), xd.row(i));
            let mut px = self.prev_x[i];
            let mut pd = self.prev_xd[i];
            let (mut a, mut bt, mut bl) = (self.a[i], self.b_trapezoid[i], self.b_left[i]);
            for c in 0..xr.len() {
                let (nx, nd) = (xr[c], xdr[c]);
                a += pd * (nx - px);
                bl += pd * pd * dt;
                bt += 0.5 * (pd * pd + nd * nd) * dt;
                px = nx;
                pd = nd;
            }
            if let Some(q) = q {
                let mut pd = self.prev_xd[i];
                let mut s = self.b_matched[i];
                for (c, qv) in q.row(i).iter().enumerate() {
                    s += pd * qv;
                    pd = xdr[c];
                }
                self.b_matched[i] = s;
            }
            if let Some(db) = db {
                let mut pd = self.prev_xd[i];
                let mut s = self.m[i];
                for (c, dbv) in db.row(i).iter().enumerate() {
                    s += pd * dbv;
                    pd = xdr[c];
                }
                self.m[i] = s;
            }
            self.a[i] = a;
            self.b_trapezoid[i] = bt;
            self.b_left[i] = bl;
            self.prev_x[i] = px;
            self.prev_xd[i] = pd;
        }
    }

    pub fn finish(self) -> BlockFunctionals {
        BlockFunctionals {
            horizon: self.horizon,
            a: self.a,
            b_trapezoid: self.b_trapezoid,
            b_left: self.b_left,
            b_matched: self.has_q.then_some(self.b_matched),
            m: self.has_db.then_some(self.m),
        }
    }
}

impl BlockSink for FunctionalsAccumulator {
    fn block(&mut self, _start: usize, x: ArrayView2<f64>, xd: ArrayView2<f64>, q: ArrayView2<f64>, db: Option<ArrayView2<f64>>) {
        self.push(x, xd, Some(q), db);
    }
}

/// Statistics of a stored observation set.
pub fn compute_functionals(obs: &ObservationSet) -> BlockFunctionals {
    use ndarray::s;
    let mut acc = FunctionalsAccumulator::new(obs.sites(), obs.dt(), obs.config.horizon);
    acc.push(
        obs.x.slice(s![.., 1..]),
        obs.xd.slice(s![.., 1..]),
        obs.q.as_ref().map(|q| q.view()),
        obs.db.as_ref().map(|d| d.view()),
    );
    acc.finish()
}

/// `R(theta') = A - theta' B - M` at site `site` (1-based), normally the jump block.
pub fn remainder_proxy(funcs: &BlockFunctionals, site: usize, theta_prime: f64, quadrature: TimeQuadrature) -> Result<f64> {
    let m = funcs.martingale()?;
    if site == 0 || site > funcs.sites() {
        return Err(Error::IndexOutOfRange {
            index: site,
            len: funcs.sites(),
        });
    }
    let b = funcs.b(quadrature)?;
    Ok(funcs.a[site - 1] - theta_prime * b[site - 1] - m[site - 1])
}

/// `theta'` in `[lo, hi]` minimizing `|mean R(theta')|` over replicates; the mean
/// is affine in `theta'` so the minimizer is a clipped root.
pub fn centring_diffusivity(a_mean: f64, b_mean: f64, m_mean: f64, lo: f64, hi: f64) -> f64 {
    if b_mean <= 0.0 {
        return 0.5 * (lo + hi);
    }
    ((a_mean - m_mean) / b_mean).clamp(lo, hi)
}

/// Inputs of the mixed-tail concentration bound.
#[derive(Debug, Clone, Copy)]
pub struct TailBoundParams {
    pub theta_lo: f64,
    pub horizon: f64,
    pub kernel_d1_norm_sq: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub z: f64,
    pub empirical: f64,
    pub standard_error: f64,
    pub bound: f64,
}

impl TailReport {
    /// Empirical tail does not exceed the bound by more than three standard errors.
    pub fn respects_bound(&self) -> bool {
        self.empirical <= self.bound + 3.0 * self.standard_error
    }
}

/// `2 exp(-(theta_lo^2 / (2 |alpha|_inf)) z^2 / (2z + |alpha|_1 T ||K'||^2 / (theta_lo delta^2)))`.
pub fn bernstein_bound(alpha: &[f64], z: f64, p: &TailBoundParams) -> f64 {
    let sup = alpha.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let l1: f64 = alpha.iter().map(|a| a.abs()).sum();
    let scale = l1 * p.horizon * p.kernel_d1_norm_sq / (p.theta_lo * p.delta * p.delta);
    2.0 * (-(p.theta_lo * p.theta_lo / (2.0 * sup)) * z * z / (2.0 * z + scale)).exp()
}

/// Empirical `P(|sum_i alpha_i (B_i - mean_i)| >= z)` across replicates, next to the bound.
pub fn tail_diagnostic(replicates: &[Vec<f64>], alpha: &[f64], z: f64, params: &TailBoundParams) -> Result<TailReport> {
    if replicates.len() < 2 {
        return Err(Error::InvalidParameter("need at least two replicates".into()));
    }
    let n = alpha.len();
    if alpha.iter().any(|&a| a < 0.0) || alpha.iter().all(|&a| a == 0.0) {
        return Err(Error::InvalidParameter("weights must be non-negative and not all zero".into()));
    }
    if replicates.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidParameter("replicate length does not match the weights".into()));
    }
    let reps = replicates.len() as f64;
    let mut mean = vec![0.0; n];
    for r in replicates {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / reps;
        }
    }
    let hits = replicates
        .iter()
        .filter(|r| {
            let s: f64 = r.iter().zip(&mean).zip(alpha).map(|((v, m), a)| a * (v - m)).sum();
            s.abs() >= z
        })
        .count();
    let p = hits as f64 / reps;
    Ok(TailReport {
        z,
        empirical: p,
        standard_error: (p * (1.0 - p) / reps).sqrt(),
        bound: bernstein_bound(alpha, z, params),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::DiffusivityProfile;
    use crate::sim::{simulate, Model, SimOptions, SimulationConfig};
    use ndarray::Array2;

    const RECORD: SimOptions = SimOptions {
        record_brownian: true,
        precision: crate::sim::Precision::Double,
    };

    fn run(seed: u64) -> (ObservationSet, BlockFunctionals) {
        let p = DiffusivityProfile::with_tight_band(1.0, 2.0, 0.43).unwrap();
        let c = SimulationConfig::with_defaults(p, 8, 1.0, seed);
        let model = Model::build(&c).unwrap();
        let obs = simulate(&c, &model, RECORD);
        let f = compute_functionals(&obs);
        (obs, f)
    }

    #[test]
    fn zero_paths_give_zero_statistics() {
        let z = Array2::<f64>::zeros((3, 11));
        let mut acc = FunctionalsAccumulator::new(3, 0.1, 1.0);
        acc.push(z.view(), z.view(), None, None);
        let f = acc.finish();
        assert!(f.a.iter().chain(&f.b_trapezoid).chain(&f.b_left).all(|&v| v == 0.0));
        assert!(f.b_matched.is_none());
        assert!(matches!(f.martingale(), Err(Error::MissingBrownianPath)));
    }

    #[test]
    fn hand_computed_sums() {
        // one site, three steps of size 0.5
        let x = ndarray::arr2(&[[1.0, 3.0, 2.0]]);
        let xd = ndarray::arr2(&[[2.0, -1.0, 4.0]]);
        let q = ndarray::arr2(&[[0.5, 0.25, 1.0]]);
        let mut acc = FunctionalsAccumulator::new(1, 0.5, 1.5);
        acc.push(x.view(), xd.view(), Some(q.view()), None);
        let f = acc.finish();
        // XD at t_0..t_3 = 0, 2, -1, 4 and X = 0, 1, 3, 2
        assert_eq!(f.a[0], 0.0 * 1.0 + 2.0 * 2.0 + (-1.0) * (-1.0));
        assert_eq!(f.b_left[0], (0.0 + 4.0 + 1.0) * 0.5);
        assert_eq!(f.b_trapezoid[0], 0.5 * (0.0 + 4.0) * 0.5 + 0.5 * (4.0 + 1.0) * 0.5 + 0.5 * (1.0 + 16.0) * 0.5);
        assert_eq!(f.b_matched.unwrap()[0], 0.0 * 0.5 + 2.0 * 0.25 + (-1.0) * 1.0);
    }

    #[test]
    fn streaming_and_stored_statistics_are_identical() {
        let (obs, f) = run(21);
        let model = Model::build(&obs.config).unwrap();
        let mut acc = FunctionalsAccumulator::new(obs.sites(), obs.dt(), obs.config.horizon);
        crate::sim::simulate_into(&obs.config, &model, RECORD, &mut acc);
        assert_eq!(acc.finish(), f);
    }

    #[test]
    fn matched_quadrature_closes_the_semimartingale_identity_off_the_jump() {
        let (obs, f) = run(4);
        let grid = obs.config.grid();
        let p = obs.config.profile;
        let kb = grid.k_bullet(p.tau());
        let b = f.b(TimeQuadrature::Matched).unwrap();
        let m = f.martingale().unwrap();
        for i in 1..=obs.sites() {
            if i == kb {
                continue;
            }
            let theta = p.theta_at(grid.center(i).unwrap());
            let lhs = f.a[i - 1];
            let rhs = theta * b[i - 1] + m[i - 1];
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(b[i - 1].abs()), "site {i}: {lhs} vs {rhs}");
        }
        assert!(remainder_proxy(&f, kb, p.theta_minus(), TimeQuadrature::Matched).unwrap().abs() > 0.0);
    }

    #[test]
    fn quadratic_variations_are_non_negative() {
        let (_, f) = run(9);
        assert!(f.b_trapezoid.iter().chain(&f.b_left).all(|&v| v >= 0.0));
    }

    #[test]
    fn bound_is_at_least_one_near_zero() {
        let params = TailBoundParams {
            theta_lo: 1.0,
            horizon: 1.0,
            kernel_d1_norm_sq: 15.6,
            delta: 0.1,
        };
        assert!(bernstein_bound(&[1.0, 0.0, 1.0], 1e-9, &params) > 1.0);
        let reps: Vec<Vec<f64>> = (0..10).map(|r| vec![r as f64, 0.0, 1.0]).collect();
        let t = tail_diagnostic(&reps, &[1.0, 0.0, 0.0], 1e6, &params).unwrap();
        assert_eq!(t.empirical, 0.0);
        assert!(t.bound >= 0.0 && t.respects_bound());
        let t0 = tail_diagnostic(&reps, &[1.0, 0.0, 0.0], 0.0, &params).unwrap();
        assert_eq!(t0.empirical, 1.0);
        assert!(t0.respects_bound());
        assert!(tail_diagnostic(&reps, &[-1.0, 0.0, 0.0], 1.0, &params).is_err());
    }

    #[test]
    fn centring_diffusivity_clips_to_the_band() {
        assert_eq!(centring_diffusivity(3.0, 2.0, 1.0, 0.5, 4.0), 1.0);
        assert_eq!(centring_diffusivity(30.0, 2.0, 1.0, 0.5, 4.0), 4.0);
        assert_eq!(centring_diffusivity(1.0, 0.0, 1.0, 0.5, 4.0), 2.25);
    }
}
