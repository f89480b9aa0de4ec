use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

mod commands;

use commands::Failure;

#[derive(Parser, Debug)]
#[command(name = "spde-cp", version, about = "Change-point estimation for the stochastic heat equation")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the seed of the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Eigenvalues of the divergence-form operator.
    Spectrum(SpectrumArgs),
    /// Simulate the measurement paths and write them as CSV.
    Simulate(SimulateArgs),
    /// Estimate the change point from an observation dump.
    Estimate(EstimateArgs),
    /// Rescaled change-point errors of the scalar signal-plus-noise analogue.
    Toy(ToyArgs),
    /// Monte Carlo samples of the limiting argmin law.
    LimitLaw(LimitLawArgs),
    /// Replicated convergence-rate study from a TOML plan.
    McRates(McRatesArgs),
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Args, Debug, Serialize)]
struct ProfileFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_minus: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_plus: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
    /// Lower end of the admissible diffusivity band.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_lo: Option<f64>,
    /// Upper end of the admissible diffusivity band.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_hi: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
struct SpectrumArgs {
    /// TOML file with the same keys as the flags.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    profile: ProfileFlags,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    modes: Option<usize>,
    /// Relative bisection tolerance.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tol: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    profile: ProfileFlags,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sites: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    horizon: Option<f64>,
    /// Time steps (default 4 n^2).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    time_steps: Option<usize>,
    /// Spectral modes (default 20 n).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    modes: Option<usize>,
    /// Exponent of the polynomial kernel (default 3).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel_degree: Option<u32>,
    /// Use the smooth bump kernel instead of the polynomial one.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    bump_kernel: bool,
    /// Also export the Brownian increments of every site.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    record_brownian: bool,
    /// Use single precision for the coefficient products.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    single_precision: bool,
}

#[derive(Args, Debug, Serialize)]
struct EstimateArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    out: PathBuf,
    /// Observation dump written by `simulate`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    input: Option<PathBuf>,
    /// Estimation band (default: the band stored in the dump).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_lo: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_hi: Option<f64>,
    /// Merge the change-point block into the right-hand group.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    no_circ: bool,
    /// Quadrature of the quadratic variation: matched, trapezoid or left-point.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    quadrature: Option<String>,
    /// Known-diffusivity CUSUM with the given diffusivities.
    #[arg(long, num_args = 2, value_names = ["THETA_MINUS", "THETA_PLUS"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    known_theta: Option<Vec<f64>>,
}

#[derive(Args, Debug, Serialize)]
struct ToyArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    out: PathBuf,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_minus: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_plus: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
    /// Measurement count n; the noise level is n^{-3/2}.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sites: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    cells: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    replicates: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct LimitLawArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    out: PathBuf,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    half_width: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    step: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    replicates: Option<usize>,
}

#[derive(Args, Debug)]
struct McRatesArgs {
    /// Experiment plan (TOML).
    #[arg(long)]
    plan: PathBuf,
    /// Report path; replicate tables are written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run the estimator with the change-point block merged into the right-hand group.
    #[arg(long)]
    no_circ: bool,
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot set up {t} worker threads: {e}")))?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::Spectrum(a) => commands::spectrum(&a.config, &a.out, &a, seed),
        Command::Simulate(a) => commands::simulate(&a.config, &a.out, &a, seed),
        Command::Estimate(a) => commands::estimate(&a.config, &a.out, &a),
        Command::Toy(a) => commands::toy(&a.config, &a.out, &a, seed),
        Command::LimitLaw(a) => commands::limit_law(&a.config, &a.out, &a, seed),
        Command::McRates(a) => commands::mc_rates(&a.plan, a.out.as_deref(), a.no_circ, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run with --help for usage");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
