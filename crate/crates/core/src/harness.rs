//! Replicated experiments over a sequence of grid sizes and convergence-rate fits.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{estimate_cusum_known_theta, estimate_simultaneous, NuisanceMode};
use crate::functionals::{BlockFunctionals, FunctionalsAccumulator, TimeQuadrature};
use crate::io::fmt_num;
use crate::kernels::KernelFamily;
use crate::profile::DiffusivityProfile;
use crate::rng::replicate_seed;
use crate::sim::{simulate_into, Model, Precision, SimOptions, SimulationConfig, SPECTRUM_TOL};
use crate::spectrum::{decompose, SpectralDecomposition};
use crate::stats::{fit_loglog_slope, ErrorSummary, SlopeFit};
use crate::toy::{toy_estimate_known_theta, toy_simulate, ToyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorVariant {
    Simultaneous,
    CusumKnown,
    Toy,
}

/// Jump height as a function of `delta = 1/n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EtaSchedule {
    /// Use `theta_plus` from the profile as given.
    Fixed,
    /// `theta_plus = theta_minus + sign * delta^beta`, with the sign of the profile's jump.
    Power { beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePlan {
    pub theta_minus: f64,
    pub theta_plus: f64,
    pub tau: f64,
    /// Estimation band; defaults to `[min / 2, 2 max]` of the two diffusivities.
    #[serde(default)]
    pub theta_lo: Option<f64>,
    #[serde(default)]
    pub theta_hi: Option<f64>,
}

fn default_time_step_factor() -> usize {
    4
}

fn default_mode_factor() -> usize {
    20
}

fn default_nuisance() -> Vec<NuisanceMode> {
    vec![NuisanceMode::Separate]
}

fn default_toy_cells() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub sites: Vec<usize>,
    pub profile: ProfilePlan,
    pub horizon: f64,
    pub replicates: usize,
    pub estimator: EstimatorVariant,
    #[serde(default = "eta_fixed")]
    pub eta: EtaSchedule,
    pub master_seed: u64,
    /// Nuisance handling for the simultaneous estimator; every entry is evaluated on the same paths.
    #[serde(default = "default_nuisance")]
    pub nuisance: Vec<NuisanceMode>,
    #[serde(default)]
    pub quadrature: TimeQuadrature,
    /// `N_t = time_step_factor * n^2`.
    #[serde(default = "default_time_step_factor")]
    pub time_step_factor: usize,
    /// `M = mode_factor * n`.
    #[serde(default = "default_mode_factor")]
    pub mode_factor: usize,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub kernel: KernelFamily,
    /// Grid cells of the scalar analogue.
    #[serde(default = "default_toy_cells")]
    pub toy_cells: usize,
    #[serde(default)]
    pub output: Option<String>,
}

fn eta_fixed() -> EtaSchedule {
    EtaSchedule::Fixed
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.sites.is_empty() || self.sites.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("site counts must be non-empty and strictly increasing".into()));
        }
        if self.sites[0] < 3 {
            return Err(Error::InvalidParameter("every grid needs at least 3 sites".into()));
        }
        if self.replicates < 50 {
            return Err(Error::InvalidParameter(format!("{} replicates is below the minimum of 50", self.replicates)));
        }
        if self.nuisance.is_empty() {
            return Err(Error::InvalidParameter("at least one nuisance mode is required".into()));
        }
        if self.time_step_factor < 4 || self.mode_factor < 10 {
            return Err(Error::InvalidParameter("resolution factors must satisfy N_t >= 4 n^2 and M >= 10 n".into()));
        }
        if let EtaSchedule::Power { beta } = self.eta {
            if !(beta > 0.0) {
                return Err(Error::InvalidParameter(format!("eta exponent {beta} must be positive")));
            }
        }
        for &n in &self.sites {
            self.profile_at(n)?;
        }
        Ok(())
    }

    /// Profile used at grid size `n`.
    pub fn profile_at(&self, n: usize) -> Result<DiffusivityProfile> {
        let p = &self.profile;
        let theta_plus = match self.eta {
            EtaSchedule::Fixed => p.theta_plus,
            EtaSchedule::Power { beta } => {
                let sign = if p.theta_plus < p.theta_minus { -1.0 } else { 1.0 };
                p.theta_minus + sign * (n as f64).powf(-beta)
            }
        };
        let lo = p.theta_lo.unwrap_or(0.5 * p.theta_minus.min(theta_plus));
        let hi = p.theta_hi.unwrap_or(2.0 * p.theta_minus.max(theta_plus));
        DiffusivityProfile::new(p.theta_minus, theta_plus, p.tau, lo, hi)
    }

    pub fn simulation_config(&self, n: usize, seed: u64) -> Result<SimulationConfig> {
        let config = SimulationConfig {
            horizon: self.horizon,
            time_steps: self.time_step_factor * n * n,
            mode_count: self.mode_factor * n,
            seed,
            sites: n,
            profile: self.profile_at(n)?,
            kernel: self.kernel,
        };
        config.validate()?;
        Ok(config)
    }

    fn toy_config(&self, n: usize) -> Result<ToyConfig> {
        let p = self.profile_at(n)?;
        let config = ToyConfig {
            theta_minus: p.theta_minus(),
            theta_plus: p.theta_plus(),
            tau: p.tau(),
            sites: n,
            cells: self.toy_cells,
            seed: 0,
        };
        config.validate()?;
        Ok(config)
    }
}

/// One line of the per-replicate table; errors are signed (`estimate - truth`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub theta_minus_hat: f64,
    pub theta_plus_hat: f64,
    pub theta_circ_hat: Option<f64>,
    pub k_hat: usize,
    pub tau_hat: f64,
    pub err_tm: f64,
    pub err_tp: f64,
    pub err_tau: f64,
}

pub const REPLICATE_COLUMNS: [&str; 11] = [
    "n",
    "rep",
    "seed",
    "theta_minus_hat",
    "theta_plus_hat",
    "theta_circ_hat",
    "k_hat",
    "tau_hat",
    "err_tm",
    "err_tp",
    "err_tau",
];

/// Spectra shared across grid sizes and replicates, keyed by profile.
#[derive(Default)]
pub struct SpectrumCache {
    entries: HashMap<String, Arc<SpectralDecomposition>>,
}

impl SpectrumCache {
    /// A decomposition of `profile` with at least `modes` modes.
    pub fn get(&mut self, profile: &DiffusivityProfile, modes: usize) -> Result<Arc<SpectralDecomposition>> {
        let key = serde_json::to_string(profile)?;
        if let Some(d) = self.entries.get(&key) {
            if d.mode_count() >= modes {
                return Ok(d.clone());
            }
        }
        let d = Arc::new(decompose(profile, modes, SPECTRUM_TOL)?);
        self.entries.insert(key, d.clone());
        Ok(d)
    }
}

/// Everything needed to run replicates at one grid size.
pub struct GridSetup {
    pub n: usize,
    pub profile: DiffusivityProfile,
    pub model: Option<Model>,
    template: SimulationConfig,
    toy: Option<ToyConfig>,
}

impl GridSetup {
    pub fn new(plan: &ExperimentPlan, n: usize, cache: &mut SpectrumCache) -> Result<Self> {
        let template = plan.simulation_config(n, 0)?;
        let (model, toy) = match plan.estimator {
            EstimatorVariant::Toy => (None, Some(plan.toy_config(n)?)),
            _ => {
                let decomp = cache.get(&template.profile, template.mode_count)?;
                (Some(Model::from_decomposition(&template, &decomp)?), None)
            }
        };
        Ok(Self {
            n,
            profile: template.profile,
            model,
            template,
            toy,
        })
    }

    /// Per-site statistics of one simulated replicate.
    pub fn functionals(&self, seed: u64, precision: Precision, record_brownian: bool) -> Result<BlockFunctionals> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("the scalar analogue has no SPDE model".into()))?;
        let config = SimulationConfig { seed, ..self.template };
        let mut acc = FunctionalsAccumulator::new(self.n, config.dt(), config.horizon);
        simulate_into(&config, model, SimOptions { record_brownian, precision }, &mut acc);
        Ok(acc.finish())
    }
}

#[allow(clippy::too_many_arguments)]
fn row_from(n: usize, rep: usize, seed: u64, profile: &DiffusivityProfile, tm: f64, tp: f64, tc: Option<f64>, k_hat: usize, tau_hat: f64) -> ReplicateRow {
    ReplicateRow {
        n,
        rep,
        seed,
        theta_minus_hat: tm,
        theta_plus_hat: tp,
        theta_circ_hat: tc,
        k_hat,
        tau_hat,
        err_tm: tm - profile.theta_minus(),
        err_tp: tp - profile.theta_plus(),
        err_tau: tau_hat - profile.tau(),
    }
}

/// Runs replicate `rep`, returning one row per entry of `plan.nuisance`
/// (a single row for the known-diffusivity and scalar variants).
pub fn run_replicate(plan: &ExperimentPlan, setup: &GridSetup, rep: usize) -> Result<Vec<ReplicateRow>> {
    let n = setup.n;
    let seed = replicate_seed(plan.master_seed, n, rep);
    let p = &setup.profile;
    match plan.estimator {
        EstimatorVariant::Toy => {
            let toy = ToyConfig {
                seed,
                ..setup.toy.clone().expect("scalar setup")
            };
            let dy = toy_simulate(&toy, 0)?;
            let tau_hat = toy_estimate_known_theta(&dy, toy.theta_minus, toy.theta_plus)?;
            let k_hat = (tau_hat * n as f64).ceil() as usize;
            Ok(vec![row_from(n, rep, seed, p, toy.theta_minus, toy.theta_plus, None, k_hat, tau_hat)])
        }
        EstimatorVariant::CusumKnown => {
            let f = setup.functionals(seed, plan.precision, false)?;
            let r = estimate_cusum_known_theta(&f.a, f.b(plan.quadrature)?, p.theta_minus(), p.theta_plus())?;
            Ok(vec![row_from(n, rep, seed, p, p.theta_minus(), p.theta_plus(), None, r.k_hat, r.tau_hat)])
        }
        EstimatorVariant::Simultaneous => {
            let f = setup.functionals(seed, plan.precision, false)?;
            let b = f.b(plan.quadrature)?;
            plan.nuisance
                .iter()
                .map(|&mode| {
                    let r = estimate_simultaneous(&f.a, b, (p.theta_lo(), p.theta_hi()), mode)?;
                    let circ = (mode == NuisanceMode::Separate).then_some(r.theta_circ_hat);
                    Ok(row_from(n, rep, seed, p, r.theta_minus_hat, r.theta_plus_hat, circ, r.k_hat, r.tau_hat))
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub n: usize,
    pub delta: f64,
    pub theta_minus: f64,
    pub theta_plus: f64,
    pub tau: f64,
    pub k_bullet: usize,
    pub replicates: usize,
    pub failures: usize,
    /// Summaries of absolute errors.
    pub abs_err_theta_minus: ErrorSummary,
    pub abs_err_theta_plus: ErrorSummary,
    /// Both sides pooled.
    pub abs_err_theta: ErrorSummary,
    pub abs_err_tau: ErrorSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeEntry {
    pub fit: Option<SlopeFit>,
    pub error: Option<String>,
}

impl SlopeEntry {
    fn from_points(points: &[(f64, f64)]) -> Self {
        match fit_loglog_slope(points) {
            Ok(fit) => SlopeEntry { fit: Some(fit), error: None },
            Err(e) => SlopeEntry {
                fit: None,
                error: Some(e.to_string()),
            },
        }
    }

    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }
}

/// Slopes of log mid-distribution median absolute error against log delta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSlopes {
    pub theta_minus: SlopeEntry,
    pub theta_plus: SlopeEntry,
    pub theta: SlopeEntry,
    pub tau: SlopeEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    /// `None` for estimators without a nuisance choice.
    pub nuisance: Option<NuisanceMode>,
    pub grids: Vec<GridSummary>,
    pub slopes: RateSlopes,
    pub replicate_csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub plan: ExperimentPlan,
    pub variants: Vec<VariantReport>,
}

impl RateReport {
    pub fn variant(&self, mode: NuisanceMode) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.nuisance == Some(mode))
    }
}

/// Report plus the raw rows, one table per variant.
#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub report: RateReport,
    pub rows: Vec<Vec<ReplicateRow>>,
}

fn abs_summary(values: impl Iterator<Item = f64>) -> ErrorSummary {
    let v: Vec<f64> = values.map(f64::abs).collect();
    ErrorSummary::of(&v)
}

fn summarize(setup: &GridSetup, rows: &[ReplicateRow], total: usize) -> GridSummary {
    let p = &setup.profile;
    GridSummary {
        n: setup.n,
        delta: 1.0 / setup.n as f64,
        theta_minus: p.theta_minus(),
        theta_plus: p.theta_plus(),
        tau: p.tau(),
        k_bullet: crate::kernels::MeasurementGrid::new(setup.n).expect("validated").k_bullet(p.tau()),
        replicates: rows.len(),
        failures: total - rows.len(),
        abs_err_theta_minus: abs_summary(rows.iter().map(|r| r.err_tm)),
        abs_err_theta_plus: abs_summary(rows.iter().map(|r| r.err_tp)),
        abs_err_theta: abs_summary(rows.iter().flat_map(|r| [r.err_tm, r.err_tp])),
        abs_err_tau: abs_summary(rows.iter().map(|r| r.err_tau)),
    }
}

fn slopes(grids: &[GridSummary]) -> RateSlopes {
    let pts = |f: &dyn Fn(&GridSummary) -> f64| -> Vec<(f64, f64)> { grids.iter().map(|g| (g.delta, f(g))).collect() };
    RateSlopes {
        theta_minus: SlopeEntry::from_points(&pts(&|g| g.abs_err_theta_minus.mid_median)),
        theta_plus: SlopeEntry::from_points(&pts(&|g| g.abs_err_theta_plus.mid_median)),
        theta: SlopeEntry::from_points(&pts(&|g| g.abs_err_theta.mid_median)),
        tau: SlopeEntry::from_points(&pts(&|g| g.abs_err_tau.mid_median)),
    }
}

/// Runs every grid size of the plan. Fails if more than 1% of the replicates at any size fail.
pub fn run_plan(plan: &ExperimentPlan) -> Result<PlanOutcome> {
    plan.validate()?;
    let variants: Vec<Option<NuisanceMode>> = match plan.estimator {
        EstimatorVariant::Simultaneous => plan.nuisance.iter().copied().map(Some).collect(),
        _ => vec![None],
    };
    let mut cache = SpectrumCache::default();
    if plan.estimator != EstimatorVariant::Toy {
        // largest grid first, so smaller grids of the same profile reuse its spectrum
        for &n in plan.sites.iter().rev() {
            cache.get(&plan.profile_at(n)?, plan.mode_factor * n)?;
        }
    }
    let mut rows: Vec<Vec<ReplicateRow>> = vec![Vec::new(); variants.len()];
    let mut grids: Vec<Vec<GridSummary>> = vec![Vec::new(); variants.len()];
    for &n in &plan.sites {
        let setup = GridSetup::new(plan, n, &mut cache)?;
        let results: Vec<Result<Vec<ReplicateRow>>> =
            (0..plan.replicates).into_par_iter().map(|r| run_replicate(plan, &setup, r)).collect();
        let failed = results.iter().filter(|r| r.is_err()).count();
        if failed * 100 > plan.replicates {
            let last = results.iter().rev().find_map(|r| r.as_ref().err()).expect("failures exist");
            return Err(Error::ReplicateFailures {
                failed,
                total: plan.replicates,
                last: last.to_string(),
            });
        }
        if failed > 0 {
            log::warn!("n = {n}: {failed} of {} replicates failed and were skipped", plan.replicates);
        }
        let ok: Vec<Vec<ReplicateRow>> = results.into_iter().filter_map(|r| r.ok()).collect();
        for (v, (table, summaries)) in rows.iter_mut().zip(grids.iter_mut()).enumerate() {
            let at_n: Vec<ReplicateRow> = ok.iter().map(|r| r[v].clone()).collect();
            summaries.push(summarize(&setup, &at_n, plan.replicates));
            table.extend(at_n);
        }
        log::info!("n = {n}: {} replicates done", plan.replicates - failed);
    }
    let report = RateReport {
        plan: plan.clone(),
        variants: variants
            .iter()
            .zip(grids)
            .map(|(mode, g)| VariantReport {
                nuisance: *mode,
                slopes: slopes(&g),
                grids: g,
                replicate_csv: None,
            })
            .collect(),
    };
    Ok(PlanOutcome { report, rows })
}

pub fn write_replicates<W: Write>(rows: &[ReplicateRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(REPLICATE_COLUMNS)?;
    for r in rows {
        out.write_record([
            r.n.to_string(),
            r.rep.to_string(),
            r.seed.to_string(),
            fmt_num(r.theta_minus_hat),
            fmt_num(r.theta_plus_hat),
            r.theta_circ_hat.map(fmt_num).unwrap_or_default(),
            r.k_hat.to_string(),
            fmt_num(r.tau_hat),
            fmt_num(r.err_tm),
            fmt_num(r.err_tp),
            fmt_num(r.err_tau),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Name suffix of a variant's replicate table.
pub fn variant_label(mode: Option<NuisanceMode>) -> &'static str {
    match mode {
        None => "replicates",
        Some(NuisanceMode::Separate) => "replicates",
        Some(NuisanceMode::Merged) => "replicates-merged",
    }
}
