//! Command-line front end: dataset ingestion, estimation, simulation,
//! benchmarks, tuning and bootstrap error, with reproducible outputs.

pub mod commands;
pub mod config;
pub mod dataset;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tcentral::efficient::{BandwidthChoice, BandwidthConstants};
use tcentral::simgen::{BenchmarkPlan, Covariance, ModelId};
use tcentral::{FunctionalSpec, ResponseMap, SeeConfig};
use thiserror::Error;

use crate::config::{
    BenchmarkConfig, BootstrapConfig, BootstrapEstimator, DataConfig, EstimateConfig, FitConfig, RunConfig,
    SimulateConfig, TuneConfig,
};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "TCENTRAL_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Core(#[from] tcentral::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tcentral", version, about = "Functional-targeted central subspace estimation")]
pub struct Cli {
    /// Rerun from a JSON config or from the `# ` echo line of any output file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the target subspace of a CSV dataset.
    Estimate(EstimateArgs),
    /// Generate a simulation-model dataset.
    Simulate(SimulateArgs),
    /// Monte-Carlo subspace-distance benchmark.
    Benchmark(BenchmarkArgs),
    /// Choose all four bandwidth constants by cross validation.
    Tune(TuneArgs),
    /// Bootstrap error of the fitted sufficient predictors.
    BootstrapError(BootstrapArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FunctionalKind {
    Mean,
    LogMean,
    Cdf,
    Moment,
    Variance,
    Median,
    Quantile,
}

#[derive(Debug, Args)]
pub struct FunctionalArgs {
    #[arg(long, value_enum, default_value = "mean")]
    pub functional: FunctionalKind,
    /// Quantile level.
    #[arg(long)]
    pub p: Option<f64>,
    /// Moment order.
    #[arg(long)]
    pub k: Option<u32>,
    /// Threshold of the conditional distribution function.
    #[arg(long)]
    pub threshold: Option<f64>,
}

impl FunctionalArgs {
    fn spec(&self) -> Result<FunctionalSpec, CliError> {
        functional_spec(self.functional, self.p, self.k, self.threshold)
    }
}

fn functional_spec(
    kind: FunctionalKind,
    p: Option<f64>,
    k: Option<u32>,
    threshold: Option<f64>,
) -> Result<FunctionalSpec, CliError> {
    let need = |what: &str| CliError::Usage(format!("--functional {kind:?} requires --{what}").to_lowercase());
    let spec = match kind {
        FunctionalKind::Mean => FunctionalSpec::mean(),
        FunctionalKind::LogMean => FunctionalSpec::Mean { f: ResponseMap::Log },
        FunctionalKind::Cdf => FunctionalSpec::Mean {
            f: ResponseMap::Indicator {
                threshold: threshold.ok_or_else(|| need("threshold"))?,
            },
        },
        FunctionalKind::Moment => FunctionalSpec::Moment {
            k: k.ok_or_else(|| need("k"))?,
        },
        FunctionalKind::Variance => FunctionalSpec::Variance,
        FunctionalKind::Median => FunctionalSpec::median(),
        FunctionalKind::Quantile => FunctionalSpec::Quantile {
            p: p.ok_or_else(|| need("p"))?,
        },
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(spec)
}

fn parse_choice(text: &str) -> Result<BandwidthChoice, String> {
    if text.eq_ignore_ascii_case("auto") {
        return Ok(BandwidthChoice::Auto);
    }
    match text.parse::<f64>() {
        Ok(c) if c > 0.0 && c.is_finite() => Ok(BandwidthChoice::Fixed(c)),
        _ => Err(format!("expected a positive number or \"auto\", got {text:?}")),
    }
}

#[derive(Debug, Args)]
pub struct SeeArgs {
    /// Bandwidth constant of step 1 (number or "auto").
    #[arg(long, value_parser = parse_choice)]
    pub c1: Option<BandwidthChoice>,
    /// Bandwidth constant of step 2.
    #[arg(long, value_parser = parse_choice)]
    pub c2: Option<BandwidthChoice>,
    /// Bandwidth constant of step 3.
    #[arg(long, value_parser = parse_choice)]
    pub c3: Option<BandwidthChoice>,
    /// Bandwidth constant of step 4.
    #[arg(long, value_parser = parse_choice)]
    pub c4: Option<BandwidthChoice>,
    /// Candidate constants for "auto" stages.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Seed of the ensemble frequencies and cross-validation folds.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SeeArgs {
    fn config(&self) -> SeeConfig {
        let mut see = SeeConfig::with_seed(self.seed);
        let d = BandwidthConstants::default();
        see.constants = BandwidthConstants {
            step1: self.c1.unwrap_or(d.step1),
            step2: self.c2.unwrap_or(d.step2),
            step3: self.c3.unwrap_or(d.step3),
            step4: self.c4.unwrap_or(d.step4),
        };
        if let Some(grid) = &self.grid {
            see.grid = grid.clone();
        }
        see
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Headed CSV file.
    #[arg(long)]
    pub data: PathBuf,
    /// Response column, by name or 0-based index.
    #[arg(long)]
    pub response: String,
    /// Predictor columns; defaults to every other unfiltered column.
    #[arg(long, value_delimiter = ',')]
    pub predictors: Option<Vec<String>>,
    /// Row filter applied in order: col==value, col!=value or row!=k.
    #[arg(long = "filter")]
    pub filters: Vec<String>,
    /// Fit on the first rows only.
    #[arg(long)]
    pub train_rows: Option<usize>,
}

impl DataArgs {
    fn config(&self) -> DataConfig {
        DataConfig {
            path: self.data.clone(),
            response: self.response.clone(),
            predictors: self.predictors.clone(),
            filters: self.filters.clone(),
            train_rows: self.train_rows,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub functional: FunctionalArgs,
    /// Dimension of the target subspace.
    #[arg(long, default_value_t = 1)]
    pub s: usize,
    /// Working dimension of the central subspace.
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    #[command(flatten)]
    pub see: SeeArgs,
}

impl FitArgs {
    fn config(&self) -> Result<FitConfig, CliError> {
        Ok(FitConfig {
            functional: self.functional.spec()?,
            s: self.s,
            working_dim: self.d,
            see: self.see.config(),
        })
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Output directory.
    #[arg(long, default_value = "tcentral-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation model, I to VII.
    #[arg(long)]
    pub model: ModelId,
    /// Sample size.
    #[arg(long)]
    pub n: usize,
    /// Predictor covariance: identity or ar_half.
    #[arg(long, default_value = "identity")]
    pub covariance: Covariance,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Simulation models, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub models: Vec<ModelId>,
    /// Functionals, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "mean")]
    pub functional: Vec<FunctionalKind>,
    /// Quantile level.
    #[arg(long)]
    pub p: Option<f64>,
    /// Moment order.
    #[arg(long)]
    pub k: Option<u32>,
    /// Threshold of the conditional distribution function.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Sample sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    /// Replicates per cell.
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Predictor covariance: identity or ar_half.
    #[arg(long, default_value = "identity")]
    pub covariance: Covariance,
    /// Working dimension of the central subspace.
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    /// Bandwidth constant of the RMAVE comparison.
    #[arg(long, default_value_t = 2.0)]
    pub rmave_c: f64,
    #[command(flatten)]
    pub see: SeeArgs,
    /// Output directory.
    #[arg(long, default_value = "tcentral-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Output CSV file.
    #[arg(long, default_value = "tune.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Estimator refitted on each resample.
    #[arg(long, value_enum, default_value = "see")]
    pub estimator: EstimatorKind,
    /// Bandwidth constant of the RMAVE estimator.
    #[arg(long, default_value_t = 2.0)]
    pub rmave_c: f64,
    /// Number of bootstrap resamples.
    #[arg(long, default_value_t = 100)]
    pub resamples: usize,
    /// Output directory.
    #[arg(long, default_value = "tcentral-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EstimatorKind {
    See,
    Rmave,
}

impl Command {
    /// Resolves the parsed flags into a validated configuration.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let config = match self {
            Command::Estimate(a) => RunConfig::Estimate(EstimateConfig {
                data: a.data.config(),
                fit: a.fit.config()?,
                out_dir: a.out.clone(),
            }),
            Command::Simulate(a) => RunConfig::Simulate(SimulateConfig {
                model: a.model,
                n: a.n,
                covariance: a.covariance,
                seed: a.seed,
                out: a.out.clone(),
            }),
            Command::Benchmark(a) => {
                let functionals = a
                    .functional
                    .iter()
                    .map(|&k| functional_spec(k, a.p, a.k, a.threshold))
                    .collect::<Result<Vec<_>, _>>()?;
                let mut plan = BenchmarkPlan::new(a.models.clone(), functionals, a.n.clone(), a.reps, a.see.seed);
                plan.covariance = a.covariance;
                plan.working_dim = a.d;
                plan.rmave_constant = a.rmave_c;
                plan.see = a.see.config();
                RunConfig::Benchmark(BenchmarkConfig {
                    plan,
                    out_dir: a.out.clone(),
                })
            }
            Command::Tune(a) => {
                let mut fit = a.fit.config()?;
                fit.see.constants = BandwidthConstants::auto();
                RunConfig::Tune(TuneConfig {
                    data: a.data.config(),
                    fit,
                    out: a.out.clone(),
                })
            }
            Command::BootstrapError(a) => RunConfig::BootstrapError(BootstrapConfig {
                data: a.data.config(),
                fit: a.fit.config()?,
                estimator: match a.estimator {
                    EstimatorKind::See => BootstrapEstimator::See,
                    EstimatorKind::Rmave => BootstrapEstimator::Rmave,
                },
                rmave_constant: a.rmave_c,
                resamples: a.resamples,
                out_dir: a.out.clone(),
            }),
        };
        config.validate()?;
        Ok(config)
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(text) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = text
        .trim()
        .parse()
        .ok()
        .filter(|t| *t > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV}={text:?} is not a positive integer")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn resolve_cli(cli: Cli) -> Result<RunConfig, CliError> {
    match (cli.config, cli.command) {
        (Some(path), None) => RunConfig::load(&path),
        (None, Some(cmd)) => cmd.resolve(),
        (Some(_), Some(_)) => Err(CliError::Usage("--config replaces the subcommand; give one or the other".into())),
        (None, None) => unreachable!("handled by the caller"),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    use clap::CommandFactory;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if cli.config.is_none() && cli.command.is_none() {
        let _ = Cli::command().write_long_help(&mut std::io::stderr());
        return 2;
    }
    let outcome = configure_threads()
        .and_then(|_| resolve_cli(cli))
        .and_then(|config| commands::execute(&config));
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
