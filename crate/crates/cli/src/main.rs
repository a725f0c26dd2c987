mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use config::ConfigError;
use output::{OutDir, Provenance};

/// Frequency sensing with a monitored Kerr parametric oscillator.
#[derive(Debug, Parser)]
#[command(name = "kpo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON configuration document.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for trajectory pipelines (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Omit timestamps from provenance headers.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Truth trajectories, photocurrents and filter estimates.
    Trajectory,
    /// Ensemble snapshots, histograms and skew-normal fits.
    Ensemble,
    /// Fisher-information growth rate over the homodyne phase.
    KfScan,
    /// Optimal homodyne phase for a list of operating points.
    PhiOpt,
    /// The adaptive sensing protocol, optionally repeated.
    Protocol,
    /// Mean, standard deviation and MSE of estimate curves.
    Stats,
    /// Skew-normal fit of a sample column.
    Fit,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<kpo_sense::Error>() {
            return match e {
                kpo_sense::Error::InvalidParameter { .. }
                | kpo_sense::Error::Unstable { .. }
                | kpo_sense::Error::Format(_) => 2,
                kpo_sense::Error::Io(_) => 4,
                _ => 3,
            };
        }
        if let Some(e) = cause.downcast_ref::<serde_json::Error>() {
            return if e.is_io() { 4 } else { 2 };
        }
        if cause.is::<std::io::Error>() {
            return 4;
        }
    }
    3
}

struct Ctx<'a> {
    cli: &'a Cli,
    config_path: &'a Path,
}

impl Ctx<'_> {
    fn open<C: Serialize>(&self, name: &'static str, cfg: &C, seed: u64) -> Result<OutDir> {
        OutDir::create(&self.cli.out, Provenance::new(name, cfg, seed, self.cli.deterministic)?)
    }

    fn load<C: DeserializeOwned>(&self) -> Result<C> {
        config::load(self.config_path)
    }
}

fn run(cli: &Cli) -> Result<u8> {
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| anyhow!(ConfigError("--config is required".into())))?;
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(ConfigError("--workers must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let ctx = Ctx { cli, config_path };
    match cli.command {
        Command::Trajectory => {
            let mut cfg: config::TrajectoryConfig = ctx.load()?;
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            let out = ctx.open("trajectory", &cfg, cfg.seed)?;
            commands::trajectory(&cfg, &out)?;
        }
        Command::Ensemble => {
            let mut cfg: config::EnsembleConfig = ctx.load()?;
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            let out = ctx.open("ensemble", &cfg, cfg.seed)?;
            commands::ensemble(&cfg, &out)?;
        }
        Command::KfScan => {
            let cfg: config::KfScanConfig = ctx.load()?;
            let out = ctx.open("kf-scan", &cfg, 0)?;
            let opt = commands::kf_scan_cmd(&cfg, &out)?;
            println!("phi_opt = {:.6}  k_F = {:.6e}{}", opt.phi, opt.k_f, if opt.flat { "  (flat)" } else { "" });
        }
        Command::PhiOpt => {
            let cfg: config::PhiOptConfig = ctx.load()?;
            let out = ctx.open("phi-opt", &cfg, 0)?;
            for (p, opt) in cfg.points.iter().zip(commands::phi_opt(&cfg, &out)?) {
                println!("omega={} epsilon={} eta={}: phi_opt = {:.6}", p.omega, p.epsilon, p.eta, opt.phi);
            }
        }
        Command::Protocol => {
            let mut cfg: config::ProtocolRunConfig = ctx.load()?;
            cfg.protocol.base_seed = cli.seed.unwrap_or(cfg.protocol.base_seed);
            let out = ctx.open("protocol", &cfg, cfg.protocol.base_seed)?;
            if !commands::protocol(&cfg, &out)? {
                log::error!("protocol halted early; see FAILED in the output directory");
                return Ok(3);
            }
        }
        Command::Stats => {
            let cfg: config::StatsConfig = ctx.load()?;
            let out = ctx.open("stats", &cfg, 0)?;
            commands::stats(&cfg, config_path, &out)?;
        }
        Command::Fit => {
            let cfg: config::FitConfig = ctx.load()?;
            let out = ctx.open("fit", &cfg, 0)?;
            let fit = commands::fit(&cfg, config_path, &out)?;
            println!(
                "mode = {:.6}  mu = {:.6}  sigma = {:.6}  alpha = {:.4}  converged = {}",
                fit.mode, fit.mu, fit.sigma, fit.alpha, fit.converged
            );
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
