use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use spde_cp::estimators::{estimate_cusum_known_theta, estimate_simultaneous, CusumResult, EstimateResult, NuisanceMode};
use spde_cp::functionals::{compute_functionals, TimeQuadrature};
use spde_cp::harness::{run_plan, variant_label, write_replicates, ExperimentPlan};
use spde_cp::io::{fmt_num, read_observations, write_functionals, write_observations};
use spde_cp::limit_law::{argmin_cdf, sample_argmin, ArgminLawConfig, MEDIAN_ABS_ARGMIN};
use spde_cp::sim::{simulate as run_simulation, Model, Precision, SimOptions, SimulationConfig};
use spde_cp::toy::{toy_estimate_known_theta, toy_simulate, ToyConfig};
use spde_cp::{decompose, stats, DiffusivityProfile, KernelFamily};

pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<spde_cp::Error> for Failure {
    fn from(e: spde_cp::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

/// Config file overlaid with the flags that were given, then the seed override.
fn resolve<T: DeserializeOwned>(file: &Option<PathBuf>, flags: &impl Serialize, seed: Option<(&str, u64)>) -> Result<T, Failure> {
    let mut merged = Map::new();
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
        let table: toml::Table = toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        match serde_json::to_value(table).map_err(|e| Failure::Usage(e.to_string()))? {
            Value::Object(m) => merged = m,
            _ => unreachable!("a TOML table maps to a JSON object"),
        }
    }
    if let Value::Object(m) = serde_json::to_value(flags).map_err(|e| Failure::Usage(e.to_string()))? {
        merged.extend(m);
    }
    if let Some((key, s)) = seed {
        merged.insert(key.to_string(), Value::from(s));
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Failure::Usage(format!("invalid configuration: {e}")))
}

fn create(dir: &Path, name: &str) -> anyhow::Result<(PathBuf, BufWriter<File>)> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok((path, BufWriter::new(file)))
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> anyhow::Result<PathBuf> {
    let (path, mut w) = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(path)
}

fn profile_from(tm: f64, tp: f64, tau: f64, lo: Option<f64>, hi: Option<f64>) -> spde_cp::Result<DiffusivityProfile> {
    DiffusivityProfile::new(tm, tp, tau, lo.unwrap_or(tm.min(tp)), hi.unwrap_or(tm.max(tp)))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpectrumConfig {
    theta_minus: f64,
    theta_plus: f64,
    tau: f64,
    #[serde(default)]
    theta_lo: Option<f64>,
    #[serde(default)]
    theta_hi: Option<f64>,
    modes: usize,
    #[serde(default = "default_tol")]
    tol: f64,
}

fn default_tol() -> f64 {
    spde_cp::sim::SPECTRUM_TOL
}

pub fn spectrum(file: &Option<PathBuf>, out: &Path, flags: &impl Serialize, _seed: Option<u64>) -> Result<(), Failure> {
    let cfg: SpectrumConfig = resolve(file, flags, None)?;
    let profile = profile_from(cfg.theta_minus, cfg.theta_plus, cfg.tau, cfg.theta_lo, cfg.theta_hi)?;
    let decomp = decompose(&profile, cfg.modes, cfg.tol)?;
    for (k, m) in decomp.modes().iter().enumerate() {
        println!("{:>6} {}", k + 1, fmt_num(m.lambda));
    }
    let path = write_json(out, "spectrum.json", &serde_json::json!({ "config": cfg, "modes": decomp.modes() }))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    theta_minus: f64,
    theta_plus: f64,
    tau: f64,
    #[serde(default)]
    theta_lo: Option<f64>,
    #[serde(default)]
    theta_hi: Option<f64>,
    sites: usize,
    #[serde(default = "one")]
    horizon: f64,
    #[serde(default)]
    time_steps: Option<usize>,
    #[serde(default)]
    modes: Option<usize>,
    #[serde(default)]
    kernel_degree: Option<u32>,
    #[serde(default)]
    bump_kernel: bool,
    #[serde(default)]
    record_brownian: bool,
    #[serde(default)]
    single_precision: bool,
    #[serde(default)]
    seed: u64,
}

fn one() -> f64 {
    1.0
}

pub fn simulate(file: &Option<PathBuf>, out: &Path, flags: &impl Serialize, seed: Option<u64>) -> Result<(), Failure> {
    let cfg: SimulateConfig = resolve(file, flags, seed.map(|s| ("seed", s)))?;
    let profile = profile_from(cfg.theta_minus, cfg.theta_plus, cfg.tau, cfg.theta_lo, cfg.theta_hi)?;
    let n = cfg.sites;
    let kernel = match (cfg.bump_kernel, cfg.kernel_degree) {
        (true, Some(_)) => return Err(Failure::Usage("--bump-kernel and --kernel-degree are exclusive".into())),
        (true, None) => KernelFamily::Bump,
        (false, Some(degree)) => KernelFamily::Polynomial { degree },
        (false, None) => KernelFamily::default(),
    };
    let config = SimulationConfig {
        horizon: cfg.horizon,
        time_steps: cfg.time_steps.unwrap_or(4 * n * n),
        mode_count: cfg.modes.unwrap_or(20 * n),
        seed: cfg.seed,
        sites: n,
        profile,
        kernel,
    };
    let model = Model::build(&config)?;
    let opts = SimOptions {
        record_brownian: cfg.record_brownian,
        precision: if cfg.single_precision { Precision::Single } else { Precision::Double },
    };
    let obs = run_simulation(&config, &model, opts);
    let (path, mut w) = create(out, "observations.csv")?;
    write_observations(&obs, &mut w)?;
    w.flush()?;
    let funcs = compute_functionals(&obs);
    let (fpath, mut fw) = create(out, "functionals.csv")?;
    write_functionals(&funcs, &config.grid(), config.profile.tau(), &config, &mut fw)?;
    fw.flush()?;
    println!("simulated {n} sites over {} steps", config.time_steps);
    println!("observations: {}", path.display());
    println!("per-site statistics: {}", fpath.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimateConfig {
    input: PathBuf,
    #[serde(default)]
    theta_lo: Option<f64>,
    #[serde(default)]
    theta_hi: Option<f64>,
    #[serde(default)]
    no_circ: bool,
    #[serde(default)]
    quadrature: Option<String>,
    #[serde(default)]
    known_theta: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct EstimateOutput<'a, R: Serialize> {
    config: &'a EstimateConfig,
    observations: &'a SimulationConfig,
    #[serde(flatten)]
    result: R,
}

pub fn estimate(file: &Option<PathBuf>, out: &Path, flags: &impl Serialize) -> Result<(), Failure> {
    let cfg: EstimateConfig = resolve(file, flags, None)?;
    let quadrature: TimeQuadrature = match &cfg.quadrature {
        Some(q) => q.parse().map_err(|e: spde_cp::Error| Failure::Usage(e.to_string()))?,
        None => TimeQuadrature::default(),
    };
    let reader = File::open(&cfg.input).map_err(|e| Failure::Usage(format!("cannot open {}: {e}", cfg.input.display())))?;
    let obs = read_observations(std::io::BufReader::new(reader))?;
    let funcs = compute_functionals(&obs);
    let b = funcs.b(quadrature)?;
    let profile = obs.config.profile;
    let path = if let Some(theta) = &cfg.known_theta {
        let [tm, tp] = theta[..] else {
            return Err(Failure::Usage("--known-theta takes two values".into()));
        };
        let r: CusumResult = estimate_cusum_known_theta(&funcs.a, b, tm, tp)?;
        println!("k_hat = {}, tau_hat = {}", r.k_hat, fmt_num(r.tau_hat));
        write_json(out, "estimate.json", &EstimateOutput { config: &cfg, observations: &obs.config, result: r })?
    } else {
        let band = (cfg.theta_lo.unwrap_or(profile.theta_lo()), cfg.theta_hi.unwrap_or(profile.theta_hi()));
        let mode = if cfg.no_circ { NuisanceMode::Merged } else { NuisanceMode::Separate };
        let r: EstimateResult = estimate_simultaneous(&funcs.a, b, band, mode)?;
        println!(
            "theta_minus_hat = {}, theta_plus_hat = {}, k_hat = {}, tau_hat = {}",
            fmt_num(r.theta_minus_hat),
            fmt_num(r.theta_plus_hat),
            r.k_hat,
            fmt_num(r.tau_hat)
        );
        write_json(out, "estimate.json", &EstimateOutput { config: &cfg, observations: &obs.config, result: r })?
    };
    println!("result: {}", path.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToyCliConfig {
    theta_minus: f64,
    theta_plus: f64,
    tau: f64,
    sites: usize,
    #[serde(default = "default_cells")]
    cells: usize,
    #[serde(default = "default_toy_replicates")]
    replicates: usize,
    #[serde(default)]
    seed: u64,
}

fn default_cells() -> usize {
    100_000
}

fn default_toy_replicates() -> usize {
    2000
}

pub fn toy(file: &Option<PathBuf>, out: &Path, flags: &impl Serialize, seed: Option<u64>) -> Result<(), Failure> {
    use rayon::prelude::*;
    let cfg: ToyCliConfig = resolve(file, flags, seed.map(|s| ("seed", s)))?;
    let toy = ToyConfig {
        theta_minus: cfg.theta_minus,
        theta_plus: cfg.theta_plus,
        tau: cfg.tau,
        sites: cfg.sites,
        cells: cfg.cells,
        seed: cfg.seed,
    };
    toy.validate()?;
    let scale = toy.error_scale();
    let tau_hats: Vec<f64> = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|r| toy_estimate_known_theta(&toy_simulate(&toy, r)?, toy.theta_minus, toy.theta_plus))
        .collect::<spde_cp::Result<_>>()?;
    let errors: Vec<f64> = tau_hats.iter().map(|t| scale * (t - toy.tau)).collect();
    let (path, mut w) = create(out, "toy_errors.csv")?;
    writeln!(w, "# config: {}", serde_json::to_string(&cfg).map_err(anyhow::Error::from)?)?;
    writeln!(w, "rep,tau_hat,rescaled_error")?;
    for (r, (t, e)) in tau_hats.iter().zip(&errors).enumerate() {
        writeln!(w, "{r},{},{}", fmt_num(*t), fmt_num(*e))?;
    }
    w.flush()?;
    let summary = serde_json::json!({
        "config": cfg,
        "error_scale": scale,
        "median": stats::median(&errors),
        "mean": stats::mean(&errors),
        "ks_to_limit_cdf": stats::ks_one_sample(&errors, argmin_cdf),
    });
    write_json(out, "toy_summary.json", &summary)?;
    println!("{} replicates, median rescaled error {}", cfg.replicates, fmt_num(stats::median(&errors)));
    println!("errors: {}", path.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LimitLawCliConfig {
    #[serde(default = "default_half_width")]
    half_width: f64,
    #[serde(default = "default_step")]
    step: f64,
    #[serde(default = "default_law_replicates")]
    replicates: usize,
    #[serde(default)]
    seed: u64,
}

fn default_half_width() -> f64 {
    50.0
}

fn default_step() -> f64 {
    0.01
}

fn default_law_replicates() -> usize {
    20_000
}

pub fn limit_law(file: &Option<PathBuf>, out: &Path, flags: &impl Serialize, seed: Option<u64>) -> Result<(), Failure> {
    let cfg: LimitLawCliConfig = resolve(file, flags, seed.map(|s| ("seed", s)))?;
    let law = ArgminLawConfig {
        half_width: cfg.half_width,
        step: cfg.step,
        replicates: cfg.replicates,
        seed: cfg.seed,
    };
    law.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let samples = sample_argmin(&law)?;
    let (path, mut w) = create(out, "argmin_samples.csv")?;
    writeln!(w, "# config: {}", serde_json::to_string(&cfg).map_err(anyhow::Error::from)?)?;
    writeln!(w, "rep,argmin")?;
    for (r, h) in samples.iter().enumerate() {
        writeln!(w, "{r},{}", fmt_num(*h))?;
    }
    w.flush()?;
    let sorted = {
        let mut s = samples.clone();
        s.sort_by(f64::total_cmp);
        s
    };
    let quantiles: Vec<Value> = [0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99]
        .iter()
        .map(|&p| serde_json::json!({ "p": p, "value": stats::quantile_sorted(&sorted, p) }))
        .collect();
    let abs: Vec<f64> = samples.iter().map(|h| h.abs()).collect();
    let summary = serde_json::json!({
        "config": cfg,
        "quantiles": quantiles,
        "median_abs": stats::median(&abs),
        "median_abs_closed_form": MEDIAN_ABS_ARGMIN,
        "ks_to_closed_form": stats::ks_one_sample(&samples, argmin_cdf),
    });
    write_json(out, "argmin_summary.json", &summary)?;
    println!("{} samples, median |argmin| {}", cfg.replicates, fmt_num(stats::median(&abs)));
    println!("samples: {}", path.display());
    Ok(())
}

pub fn mc_rates(plan_path: &Path, out: Option<&Path>, no_circ: bool, seed: Option<u64>) -> Result<(), Failure> {
    let text = fs::read_to_string(plan_path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", plan_path.display())))?;
    let mut plan: ExperimentPlan = toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", plan_path.display())))?;
    if let Some(s) = seed {
        plan.master_seed = s;
    }
    if no_circ {
        plan.nuisance = vec![NuisanceMode::Merged];
    }
    plan.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let report_path = out
        .map(Path::to_path_buf)
        .or_else(|| plan.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("report.json"));
    let dir = report_path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
    let stem = report_path.file_stem().and_then(|s| s.to_str()).unwrap_or("report").to_string();
    let mut outcome = run_plan(&plan)?;
    let plan_json = serde_json::to_string(&plan).map_err(anyhow::Error::from)?;
    for (variant, rows) in outcome.report.variants.iter_mut().zip(&outcome.rows) {
        let name = format!("{stem}.{}.csv", variant_label(variant.nuisance));
        let (_, mut w) = create(&dir, &name)?;
        writeln!(w, "# config: {plan_json}")?;
        write_replicates(rows, &mut w)?;
        w.flush()?;
        variant.replicate_csv = Some(name);
    }
    let file_name = report_path.file_name().and_then(|s| s.to_str()).unwrap_or("report.json").to_string();
    let path = write_json(&dir, &file_name, &outcome.report)?;
    for v in &outcome.report.variants {
        let label = match v.nuisance {
            Some(NuisanceMode::Merged) => "merged block",
            _ => "default",
        };
        let show = |e: &spde_cp::harness::SlopeEntry| match e.fit {
            Some(f) => format!("{:.3} +/- {:.3}", f.slope, f.stderr),
            None => format!("n/a ({})", e.error.as_deref().unwrap_or("")),
        };
        println!("[{label}] slope theta_minus {}", show(&v.slopes.theta_minus));
        println!("[{label}] slope theta_plus  {}", show(&v.slopes.theta_plus));
        println!("[{label}] slope tau         {}", show(&v.slopes.tau));
    }
    println!("report: {}", path.display());
    Ok(())
}
