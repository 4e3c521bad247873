//! `w2lab`: train toy diffusion models and check Wasserstein bounds against
//! them. Every subcommand writes CSV/JSON artifacts plus `manifest.json` to
//! `--out-dir`; logs go to stderr.
//!
//! Exit codes: 0 success, 2 bad configuration, 3 divergence, 4 bound violated.

mod commands;
mod config;
mod exit;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use w2lab_core::training::Regularizer;

use config::TrainArgs;
use exit::Failure;

#[derive(Parser, Debug)]
#[command(name = "w2lab", version, about = "Wasserstein bound experiments for score-based diffusion")]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Flat JSON file with training config keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, default_value = "w2lab-out")]
    pub out_dir: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a score network and record its history.
    Train(TrainCmd),
    /// Check the bound at every logged epoch of a run.
    VerifyBound(VerifyCmd),
    /// Retrain over several step counts and record the offset term.
    SweepT(SweepCmd),
    /// Compare weight regularizers by converged loss and intercept.
    Regularize(RegularizeCmd),
    /// Train on clean and corrupted data and check the perturbation bound.
    Perturb(PerturbCmd),
    /// Plug-in KDE estimate of J_SM for a trained network.
    EstimateJsm(JsmCmd),
}

#[derive(Args, Debug)]
pub struct TrainCmd {
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug)]
pub struct VerifyCmd {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Directory written by `train`; trains afresh when omitted.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Replace the integrating factor by zero.
    #[arg(long, hide = true)]
    pub zero_i_series: bool,
}

#[derive(Args, Debug)]
pub struct SweepCmd {
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_delimiter = ',', default_value = "10,50,100,150,200")]
    pub t_list: Vec<usize>,
}

#[derive(Args, Debug)]
pub struct RegularizeCmd {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Comma-separated variants; defaults to vanilla, spectral, clip:0.1 and
    /// weight-decay at 0.01, 0.1, 0.5, 1 and 5.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<Regularizer>,
}

#[derive(Args, Debug)]
pub struct PerturbCmd {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Standard deviation of the noise added to the data.
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    /// Number of consecutive seeds starting at the master seed.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
}

#[derive(Args, Debug)]
pub struct JsmCmd {
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub n_per_t: usize,
    #[arg(long, default_value_t = 0.05)]
    pub bandwidth: f64,
    #[arg(long, default_value_t = 0.01)]
    pub fd_step: f64,
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("W2LAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::config(format!("W2LAB_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::config(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    init_threads()?;
    let g = &cli.global;
    match &cli.command {
        Command::Train(c) => commands::train(g, c),
        Command::VerifyBound(c) => commands::verify_bound(g, c),
        Command::SweepT(c) => commands::sweep_t(g, c),
        Command::Regularize(c) => commands::regularize(g, c),
        Command::Perturb(c) => commands::perturb(g, c),
        Command::EstimateJsm(c) => commands::estimate_jsm(g, c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
