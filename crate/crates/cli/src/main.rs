mod commands;
mod config;
mod data;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SUBCOMMANDS: [&str; 5] = ["synth", "optimize", "backtest", "density", "riskmodel"];

#[derive(Parser)]
#[command(name = "fanopt", version, about = "Mean-to-risk ratio portfolio optimization and backtests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic panel and write it as CSV.
    Synth(Run<SynthArgs>),
    /// Maximize a mean-to-risk ratio for one set of expected returns.
    Optimize(Run<OptimizeArgs>),
    /// Intraday mean-reversion backtest, optionally swept over n_opt = 1..5.
    Backtest(Run<BacktestArgs>),
    /// Kernel density estimates of volatility and log-volatility.
    Density(Run<DensityArgs>),
    /// Build a statistical risk model and write it to a file.
    Riskmodel(Run<RiskmodelArgs>),
}

/// Options every subcommand shares; these never come from a config file.
#[derive(Args)]
struct Run<T: Args> {
    /// TOML file with one table per subcommand; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, default_value = ".")]
    out: PathBuf,
    #[command(flatten)]
    args: T,
}

/// Where the panel comes from: a directory of CSVs, individual CSVs, or the
/// synthetic generator (the default).
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct DataArgs {
    /// Directory holding returns.csv, volumes.csv and optionally
    /// intraday.csv and open_prices.csv.
    #[arg(long)]
    pub panel: Option<PathBuf>,
    /// Returns CSV (tickers by dates, most recent date first).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Dollar volumes matching --input; zeros when absent.
    #[arg(long)]
    pub volumes: Option<PathBuf>,
    #[arg(long)]
    pub intraday: Option<PathBuf>,
    #[arg(long)]
    pub open_prices: Option<PathBuf>,
    /// Generator settings file for synthetic data.
    #[arg(long)]
    pub generator: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Synthetic universe size.
    #[arg(long)]
    pub n: Option<usize>,
    /// Synthetic history length in days.
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub k_factors: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct SynthArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioKind {
    Sharpe,
    Fano,
    Power,
    Exp,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct OptimizeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub ratio: Option<RatioKind>,
    /// Exponent of f(V) = V^p.
    #[arg(long)]
    pub p: Option<f64>,
    /// Rate of f(V) = exp(xi V).
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub long_only: bool,
    /// Moving-average window of expected returns, in days.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Days of history behind the statistical risk model (default: all).
    #[arg(long)]
    pub risk_window: Option<usize>,
    /// Risk model file to use instead of building one from the returns.
    #[arg(long)]
    pub risk_model: Option<PathBuf>,
    #[arg(long)]
    pub remove_market_mode: bool,
    /// Expected returns CSV (label, value); requires --covariance.
    #[arg(long)]
    pub expected: Option<PathBuf>,
    /// Dense covariance CSV matching --expected.
    #[arg(long)]
    pub covariance: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct BacktestArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub n_opt: Option<usize>,
    /// Run n_opt = 1..5 and write a summary table.
    #[arg(long)]
    pub sweep: bool,
    #[arg(long)]
    pub b_hat: Option<f64>,
    /// Positions are capped at this fraction of ADDV.
    #[arg(long)]
    pub bounds_fraction: Option<f64>,
    /// Total absolute dollar holdings.
    #[arg(long)]
    pub investment: Option<f64>,
    #[arg(long)]
    pub risk_window: Option<usize>,
    /// Rebuild the risk model every this many days.
    #[arg(long)]
    pub refresh: Option<usize>,
    /// Fraction of the previous day's return expected to revert.
    #[arg(long)]
    pub reversion: Option<f64>,
    /// Window for cost calibration and ADDV.
    #[arg(long)]
    pub cost_window: Option<usize>,
    /// Only trade the most recent this many days.
    #[arg(long)]
    pub max_days: Option<usize>,
    /// Drop the dollar-neutrality constraint.
    #[arg(long)]
    pub no_neutral: bool,
    #[arg(long)]
    pub remove_market_mode: bool,
    /// Optimize raw rather than cost-adjusted expected returns.
    #[arg(long)]
    pub no_cost_adjust: bool,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct DensityArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Volatility window in days.
    #[arg(long)]
    pub window: Option<usize>,
    /// Grid points of each density.
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct RiskmodelArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Days of history (default: all).
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub remove_market_mode: bool,
    /// Truncate rather than round the effective rank.
    #[arg(long)]
    pub truncate_erank: bool,
}

fn resolve<T>(name: &str, run: &Run<T>) -> Result<T, CliError>
where
    T: Args + Serialize + for<'de> Deserialize<'de> + Default,
{
    let file = match &run.config {
        Some(path) => config::load_section(path, name)?,
        None => Default::default(),
    };
    config::merge(&run.args, file)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(r) => commands::synth(&resolve("synth", &r)?, &r.out),
        Command::Optimize(r) => commands::optimize(&resolve("optimize", &r)?, &r.out),
        Command::Backtest(r) => commands::backtest(&resolve("backtest", &r)?, &r.out),
        Command::Density(r) => commands::density(&resolve("density", &r)?, &r.out),
        Command::Riskmodel(r) => commands::riskmodel(&resolve("riskmodel", &r)?, &r.out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
