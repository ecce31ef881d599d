use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sma_cli::commands;
use sma_cli::config::RunConfig;
use sma_cli::exit_code;
use sma_core::{Result, SmaError};

#[derive(Parser)]
#[command(name = "sma", version, about = "Model averaging for quantile regression with nonignorable nonresponse")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset with missing responses from a simulation design.
    Simulate(Common),
    /// Screen covariates and write the nested candidate sets.
    Screen(Common),
    /// Fit and average the nonresponse candidates.
    FitMechanism(Common),
    /// Fit and average the quantile candidates.
    FitCqf(Common),
    /// Predict conditional quantiles from a saved quantile fit.
    Predict(Common),
    /// Run a Monte-Carlo benchmark and write summary, per-replication and plot files.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads, 0 for the machine default.
    #[arg(long)]
    threads: Option<usize>,
    /// Input dataset CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Saved quantile fit (predict).
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Saved nonresponse fit whose tilt fit-cqf reuses.
    #[arg(long)]
    mechanism_fit: Option<PathBuf>,
    /// Any configuration key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let file = self.config.as_deref().map(std::fs::read_to_string).transpose()?;
        let mut overrides = Vec::new();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| SmaError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        for (k, v) in [
            ("seed", self.seed.map(|s| s.to_string())),
            ("threads", self.threads.map(|s| s.to_string())),
            ("out", path(&self.out)),
            ("data", path(&self.data)),
            ("fit", path(&self.fit)),
            ("mechanism_fit", path(&self.mechanism_fit)),
        ] {
            if let Some(v) = v {
                overrides.push((k.to_string(), v));
            }
        }
        RunConfig::resolve(file.as_deref(), &overrides)
    }
}

fn run(cli: Cli) -> Result<()> {
    let (common, body): (&Common, fn(&RunConfig) -> Result<()>) = match &cli.command {
        Command::Simulate(c) => (c, commands::run_simulate),
        Command::Screen(c) => (c, commands::run_screen),
        Command::FitMechanism(c) => (c, commands::run_fit_mechanism),
        Command::FitCqf(c) => (c, commands::run_fit_cqf),
        Command::Predict(c) => (c, commands::run_predict),
        Command::Bench(c) => (c, commands::run_bench_cmd),
    };
    let cfg = common.resolve()?;
    log::info!("seed = {}", cfg.seed);
    body(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
