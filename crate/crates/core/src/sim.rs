//! Exact spectral simulation of the stochastic heat equation and synthesis of the
//! local measurements.
//!
//! Each eigen-coordinate is an Ornstein–Uhlenbeck process. Over one step of
//! length `dt` the simulator draws, jointly and exactly,
//! the new coordinate, the Wiener increment `dW` of the mode and the time
//! integral of the coordinate over the step. The latter gives the exact
//! increment of `int XD ds` on every step, which the matched quadrature of
//! [`crate::functionals`] uses.

use ndarray::{linalg::general_mat_mul, s, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{coefficient_table, CoefficientTable, KernelFamily, MeasurementGrid, MeasurementKernel};
use crate::profile::DiffusivityProfile;
use crate::rng;
use crate::spectrum::{decompose, SpectralDecomposition};

/// Relative bisection tolerance used when the simulator builds its own spectrum.
pub const SPECTRUM_TOL: f64 = 1e-13;

const BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub horizon: f64,
    pub time_steps: usize,
    pub mode_count: usize,
    pub seed: u64,
    pub sites: usize,
    pub profile: DiffusivityProfile,
    #[serde(default)]
    pub kernel: KernelFamily,
}

impl SimulationConfig {
    /// Config with the default resolution `N_t = 4 n^2` and `M = 20 n`.
    pub fn with_defaults(profile: DiffusivityProfile, sites: usize, horizon: f64, seed: u64) -> Self {
        Self {
            horizon,
            time_steps: 4 * sites * sites,
            mode_count: 20 * sites,
            seed,
            sites,
            profile,
            kernel: KernelFamily::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon {} must be positive", self.horizon)));
        }
        if self.sites == 0 {
            return Err(Error::InvalidParameter("at least one site is required".into()));
        }
        if self.time_steps < 4 * self.sites * self.sites {
            return Err(Error::InvalidParameter(format!(
                "time_steps = {} is below 4 n^2 = {}",
                self.time_steps,
                4 * self.sites * self.sites
            )));
        }
        if self.mode_count < 10 * self.sites {
            return Err(Error::InvalidParameter(format!(
                "mode_count = {} is below 10 n = {}",
                self.mode_count,
                10 * self.sites
            )));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.time_steps as f64
    }

    pub fn grid(&self) -> MeasurementGrid {
        MeasurementGrid::new(self.sites).expect("validated site count")
    }
}

/// Spectrum, kernel and per-site coefficients for one configuration; reusable
/// across seeds.
#[derive(Debug, Clone)]
pub struct Model {
    pub decomp: SpectralDecomposition,
    pub kernel: MeasurementKernel,
    pub grid: MeasurementGrid,
    pub coeffs: CoefficientTable,
    /// Rows `0..n` hold `a`, rows `n..2n` hold `b`.
    stacked: Array2<f64>,
}

impl Model {
    pub fn build(config: &SimulationConfig) -> Result<Self> {
        config.validate()?;
        let decomp = decompose(&config.profile, config.mode_count, SPECTRUM_TOL)?;
        Self::from_decomposition(config, &decomp)
    }

    /// Reuses a precomputed spectrum with at least `config.mode_count` modes.
    pub fn from_decomposition(config: &SimulationConfig, decomp: &SpectralDecomposition) -> Result<Self> {
        config.validate()?;
        if decomp.mode_count() < config.mode_count || decomp.profile() != &config.profile {
            return Err(Error::InvalidParameter(
                "spectrum does not match the simulation profile or has too few modes".into(),
            ));
        }
        let decomp = decomp.truncated(config.mode_count);
        let kernel = MeasurementKernel::new(config.kernel)?;
        let grid = config.grid();
        let coeffs = coefficient_table(&decomp, &grid, &kernel)?;
        let stacked = ndarray::concatenate(Axis(0), &[coeffs.a.view(), coeffs.b.view()])
            .expect("coefficient blocks share the mode axis");
        Ok(Self {
            decomp,
            kernel,
            grid,
            coeffs,
            stacked,
        })
    }
}

/// Exact one-step transition of a single OU coordinate `dx = -lambda x dt + dW`.
#[derive(Debug, Clone, Copy)]
pub struct OuStep {
    decay: f64,
    /// `(1 - decay) / lambda`, the weight of the current state in the step integral.
    carry: f64,
    inv_lambda: f64,
    sqrt_dt: f64,
    /// Loadings of `zeta = int_0^dt (1 - e^{-lambda (dt - s)}) dW_s` on the two normals.
    zeta_z1: f64,
    zeta_z2: f64,
}

impl OuStep {
    pub fn new(lambda: f64, dt: f64) -> Self {
        let x = lambda * dt;
        let decay = (-x).exp();
        let one_minus = -(-x).exp_m1();
        // g(x) = (1 - e^{-2x}) / (2x) - ((1 - e^{-x}) / x)^2 and h(x) = 1 - (1 - e^{-x}) / x
        let (g, h) = if x < 1e-2 {
            let x2 = x * x;
            (
                x2 * (1.0 / 12.0 - x / 12.0 + 17.0 * x2 / 360.0 - 7.0 * x2 * x / 360.0 + 43.0 * x2 * x2 / 6720.0
                    - 107.0 * x2 * x2 * x / 60480.0),
                x * (0.5 - x / 6.0 + x2 / 24.0 - x2 * x / 120.0 + x2 * x2 / 720.0),
            )
        } else {
            let r = one_minus / x;
            (-(-2.0 * x).exp_m1() / (2.0 * x) - r * r, 1.0 - r)
        };
        let sqrt_dt = dt.sqrt();
        Self {
            decay,
            carry: one_minus / lambda,
            inv_lambda: 1.0 / lambda,
            sqrt_dt,
            zeta_z1: sqrt_dt * h,
            zeta_z2: sqrt_dt * g.max(0.0).sqrt(),
        }
    }

    /// Advances `x` given two standard normals; returns `(x_new, int x ds, dW)`.
    #[inline]
    pub fn advance(&self, x: f64, z1: f64, z2: f64) -> (f64, f64, f64) {
        let dw = self.sqrt_dt * z1;
        let zeta = self.zeta_z1 * z1 + self.zeta_z2 * z2;
        let integral = x * self.carry + zeta * self.inv_lambda;
        (self.decay * x + (dw - zeta), integral, dw)
    }

    /// Closed-form covariance of `(xi, dW)`, where `xi = x_new - decay * x`.
    pub fn noise_covariance(lambda: f64, dt: f64) -> [[f64; 2]; 2] {
        let v = -(-2.0 * lambda * dt).exp_m1() / (2.0 * lambda);
        let c = -(-lambda * dt).exp_m1() / lambda;
        [[v, c], [c, dt]]
    }
}

/// Sampled measurement paths on `t_j = j T / N_t`, `j = 0..=N_t`.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    pub config: SimulationConfig,
    /// `n x (N_t + 1)`: `X_i(t_j)`.
    pub x: Array2<f64>,
    /// `n x (N_t + 1)`: `XD_i(t_j)`.
    pub xd: Array2<f64>,
    /// `n x N_t`: `int_{t_j}^{t_{j+1}} XD_i ds`, when recorded.
    pub q: Option<Array2<f64>>,
    /// `n x N_t`: increments of `B_i = <W, K_i>`, when recorded.
    pub db: Option<Array2<f64>>,
}

impl ObservationSet {
    pub fn sites(&self) -> usize {
        self.x.nrows()
    }

    pub fn steps(&self) -> usize {
        self.x.ncols() - 1
    }

    pub fn dt(&self) -> f64 {
        self.config.horizon / self.steps() as f64
    }

    pub fn times(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..=self.steps()).map(|j| j as f64 * dt).collect()
    }

    /// Increments of `B_i` for site `i` (1-based).
    pub fn brownian_increments_for_site(&self, i: usize) -> Result<Vec<f64>> {
        let db = self.db.as_ref().ok_or(Error::MissingBrownianPath)?;
        if i == 0 || i > db.nrows() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: db.nrows(),
            });
        }
        Ok(db.row(i - 1).to_vec())
    }
}

/// Floating-point type of the coefficient-by-state products. The OU recursion
/// and all downstream sums run in `f64` either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    #[default]
    Double,
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimOptions {
    pub record_brownian: bool,
    pub precision: Precision,
}

/// Receives consecutive blocks of measurements. Column `c` of every block refers
/// to the step from `t_{start + c}` to `t_{start + c + 1}`: `x`/`xd` are sampled at
/// its right end, `q` and `db` are the step integrals.
pub trait BlockSink {
    fn block(&mut self, start: usize, x: ArrayView2<f64>, xd: ArrayView2<f64>, q: ArrayView2<f64>, db: Option<ArrayView2<f64>>);
}

trait Real: ndarray::LinalgScalar + Send + Sync {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

struct Coefficients<T> {
    stacked: Array2<T>,
    a: Array2<T>,
    b: Array2<T>,
}

impl<T: Real> Coefficients<T> {
    fn from_model(model: &Model) -> Self {
        Self {
            stacked: model.stacked.mapv(T::from_f64),
            a: model.coeffs.a.mapv(T::from_f64),
            b: model.coeffs.b.mapv(T::from_f64),
        }
    }
}

/// Runs the simulation, handing measurement blocks to `sink` in time order.
pub fn simulate_into<S: BlockSink>(config: &SimulationConfig, model: &Model, opts: SimOptions, sink: &mut S) {
    match opts.precision {
        Precision::Double => run::<f64, S>(config, model, &Coefficients::from_model(model), opts.record_brownian, sink),
        Precision::Single => run::<f32, S>(config, model, &Coefficients::from_model(model), opts.record_brownian, sink),
    }
}

fn run<T: Real, S: BlockSink>(config: &SimulationConfig, model: &Model, coef: &Coefficients<T>, record_brownian: bool, sink: &mut S) {
    let m = config.mode_count;
    let n = config.sites;
    let dt = config.dt();
    let steps: Vec<OuStep> = model.decomp.modes().iter().map(|md| OuStep::new(md.lambda, dt)).collect();
    let mut streams: Vec<_> = (0..m).map(|k| rng::stream(config.seed, k as u64)).collect();
    let mut state = vec![0.0; m];
    let mut xs = Array2::<T>::zeros((m, BLOCK));
    let mut ys = Array2::<T>::zeros((m, BLOCK));
    let mut ws = Array2::<T>::zeros((m, if record_brownian { BLOCK } else { 0 }));
    let mut obs = Array2::<T>::zeros((2 * n, BLOCK));
    let mut qs = Array2::<T>::zeros((n, BLOCK));
    let mut dbs = Array2::<T>::zeros((n, BLOCK));
    let mut obs64 = Array2::<f64>::zeros((2 * n, BLOCK));
    let mut qs64 = Array2::<f64>::zeros((n, BLOCK));
    let mut dbs64 = Array2::<f64>::zeros((n, BLOCK));
    let mut start = 0;
    while start < config.time_steps {
        let len = BLOCK.min(config.time_steps - start);
        let ws_rows: Vec<_> = if record_brownian {
            ws.axis_iter_mut(Axis(0)).map(Some).collect()
        } else {
            (0..m).map(|_| None).collect()
        };
        xs.axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(ys.axis_iter_mut(Axis(0)))
            .zip(ws_rows)
            .zip(streams.par_iter_mut())
            .zip(state.par_iter_mut())
            .zip(steps.par_iter())
            .for_each(|(((((mut xrow, mut yrow), mut wrow), rng), x), step)| {
                let mut cur = *x;
                for c in 0..len {
                    let z1: f64 = StandardNormal.sample(rng);
                    let z2: f64 = StandardNormal.sample(rng);
                    let (next, integral, dw) = step.advance(cur, z1, z2);
                    xrow[c] = T::from_f64(next);
                    yrow[c] = T::from_f64(integral);
                    if let Some(w) = wrow.as_mut() {
                        w[c] = T::from_f64(dw);
                    }
                    cur = next;
                }
                *x = cur;
            });
        general_mat_mul(T::one(), &coef.stacked, &xs.slice(s![.., ..len]), T::zero(), &mut obs.slice_mut(s![.., ..len]));
        general_mat_mul(T::one(), &coef.b, &ys.slice(s![.., ..len]), T::zero(), &mut qs.slice_mut(s![.., ..len]));
        if record_brownian {
            general_mat_mul(T::one(), &coef.a, &ws.slice(s![.., ..len]), T::zero(), &mut dbs.slice_mut(s![.., ..len]));
        }
        for (dst, src) in [(&mut obs64, &obs), (&mut qs64, &qs), (&mut dbs64, &dbs)] {
            ndarray::Zip::from(dst.slice_mut(s![.., ..len]))
                .and(src.slice(s![.., ..len]))
                .for_each(|d, &v| *d = v.to_f64());
        }
        sink.block(
            start,
            obs64.slice(s![..n, ..len]),
            obs64.slice(s![n.., ..len]),
            qs64.slice(s![.., ..len]),
            record_brownian.then(|| dbs64.slice(s![.., ..len])),
        );
        start += len;
    }
}

struct Recorder {
    x: Array2<f64>,
    xd: Array2<f64>,
    q: Array2<f64>,
    db: Option<Array2<f64>>,
}

impl BlockSink for Recorder {
    fn block(&mut self, start: usize, x: ArrayView2<f64>, xd: ArrayView2<f64>, q: ArrayView2<f64>, db: Option<ArrayView2<f64>>) {
        let len = x.ncols();
        self.x.slice_mut(s![.., start + 1..start + 1 + len]).assign(&x);
        self.xd.slice_mut(s![.., start + 1..start + 1 + len]).assign(&xd);
        self.q.slice_mut(s![.., start..start + len]).assign(&q);
        if let (Some(dst), Some(src)) = (self.db.as_mut(), db) {
            dst.slice_mut(s![.., start..start + len]).assign(&src);
        }
    }
}

/// Simulates and stores the full measurement paths.
pub fn simulate(config: &SimulationConfig, model: &Model, opts: SimOptions) -> ObservationSet {
    let n = config.sites;
    let nt = config.time_steps;
    let mut rec = Recorder {
        x: Array2::zeros((n, nt + 1)),
        xd: Array2::zeros((n, nt + 1)),
        q: Array2::zeros((n, nt)),
        db: opts.record_brownian.then(|| Array2::zeros((n, nt))),
    };
    simulate_into(config, model, opts, &mut rec);
    ObservationSet {
        config: *config,
        x: rec.x,
        xd: rec.xd,
        q: Some(rec.q),
        db: rec.db,
    }
}

/// `E[X_i(t)^2]` and `E[XD_i(t)^2]` from the spectral expansion.
pub fn second_moments(model: &Model, site: usize, t: f64) -> Result<(f64, f64)> {
    if site == 0 || site > model.grid.n() {
        return Err(Error::IndexOutOfRange {
            index: site,
            len: model.grid.n(),
        });
    }
    let a = model.coeffs.a.row(site - 1);
    let b = model.coeffs.b.row(site - 1);
    let mut vx = 0.0;
    let mut vd = 0.0;
    for (k, md) in model.decomp.modes().iter().enumerate() {
        let v = -(-2.0 * md.lambda * t).exp_m1() / (2.0 * md.lambda);
        vx += a[k] * a[k] * v;
        vd += b[k] * b[k] * v;
    }
    Ok((vx, vd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const RECORD: SimOptions = SimOptions {
        record_brownian: true,
        precision: Precision::Double,
    };

    fn small_config(seed: u64) -> SimulationConfig {
        let p = DiffusivityProfile::with_tight_band(1.0, 2.0, 0.35).unwrap();
        SimulationConfig::with_defaults(p, 6, 1.0, seed)
    }

    #[test]
    fn rejects_under_resolved_configs() {
        let mut c = small_config(1);
        c.time_steps = 4 * 36 - 1;
        assert!(c.validate().is_err());
        let mut c = small_config(1);
        c.mode_count = 59;
        assert!(c.validate().is_err());
        let mut c = small_config(1);
        c.horizon = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn joint_step_noise_has_the_closed_form_covariance() {
        for (lambda, dt) in [(3.0, 1e-4), (50.0, 0.01), (1e4, 1e-3), (9.87, 1e-7)] {
            let s = OuStep::new(lambda, dt);
            // xi = dW - zeta with loadings on (z1, z2)
            let xi = (s.sqrt_dt - s.zeta_z1, -s.zeta_z2);
            let dw = (s.sqrt_dt, 0.0);
            let cov = OuStep::noise_covariance(lambda, dt);
            assert_relative_eq!(xi.0 * xi.0 + xi.1 * xi.1, cov[0][0], max_relative = 1e-9);
            assert_relative_eq!(xi.0 * dw.0, cov[0][1], max_relative = 1e-9);
            assert_relative_eq!(dw.0 * dw.0, cov[1][1], max_relative = 1e-12);
        }
    }

    #[test]
    fn series_and_direct_branches_agree_at_the_switch() {
        let dt = 1.0;
        let below = OuStep::new(1e-2 * (1.0 - 1e-9), dt);
        let above = OuStep::new(1e-2 * (1.0 + 1e-9), dt);
        assert_relative_eq!(below.zeta_z2, above.zeta_z2, max_relative = 1e-6);
        assert_relative_eq!(below.zeta_z1, above.zeta_z1, max_relative = 1e-6);
    }

    #[test]
    fn step_integral_closes_the_ou_increment() {
        let s = OuStep::new(37.0, 0.003);
        let (next, integral, dw) = s.advance(0.4, 0.3, -1.2);
        assert_relative_eq!(next - 0.4, -37.0 * integral + dw, epsilon = 1e-15);
    }

    #[test]
    fn zero_initial_condition_and_finite_paths() {
        let c = small_config(3);
        let model = Model::build(&c).unwrap();
        let obs = simulate(&c, &model, RECORD);
        assert!(obs.x.column(0).iter().all(|&v| v == 0.0));
        assert!(obs.xd.column(0).iter().all(|&v| v == 0.0));
        assert!(obs.x.iter().chain(obs.xd.iter()).all(|v| v.is_finite()));
        assert_eq!(obs.steps(), c.time_steps);
        assert_eq!(obs.brownian_increments_for_site(2).unwrap().len(), c.time_steps);
        assert!(obs.brownian_increments_for_site(7).is_err());
    }

    #[test]
    fn identical_configs_give_identical_paths() {
        let c = small_config(11);
        let model = Model::build(&c).unwrap();
        let a = simulate(&c, &model, SimOptions::default());
        let b = simulate(&c, &model, SimOptions::default());
        assert_eq!(a.x, b.x);
        assert_eq!(a.xd, b.xd);
        let other = simulate(&small_config(12), &model, SimOptions::default());
        assert_ne!(a.x, other.x);
    }

    #[test]
    fn recording_brownian_increments_does_not_change_the_paths() {
        let c = small_config(5);
        let model = Model::build(&c).unwrap();
        let a = simulate(&c, &model, SimOptions::default());
        let b = simulate(&c, &model, RECORD);
        assert_eq!(a.x, b.x);
        assert!(a.db.is_none());
        assert!(matches!(a.brownian_increments_for_site(1), Err(Error::MissingBrownianPath)));
    }

    #[test]
    fn single_precision_products_stay_close() {
        let c = small_config(8);
        let model = Model::build(&c).unwrap();
        let a = simulate(&c, &model, SimOptions::default());
        let b = simulate(
            &c,
            &model,
            SimOptions {
                record_brownian: false,
                precision: Precision::Single,
            },
        );
        let scale = a.xd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = (&a.xd - &b.xd).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-5 * scale, "{diff} vs {scale}");
    }
}
