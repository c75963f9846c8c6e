use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use bvtraffic_cli::commands::{cmd_cluster, cmd_denoise, cmd_estimate, cmd_predict, cmd_table1};
use bvtraffic_cli::config::{parse_grid, RunConfig};
use clap::{Args, Parser, Subcommand};

/// Bounded-total-variation denoising and analysis of road velocity records.
#[derive(Parser)]
#[command(name = "bvtraffic", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Denoise every road-day and write `denoised.csv` with solver diagnostics.
    Denoise(Common),
    /// Estimate the noise strength of every road-day.
    EstimateSigma(Common),
    /// Cluster road profiles of one day by density peaks.
    Cluster(Common),
    /// Predict each road's last day from its history, raw and denoised.
    Predict(Common),
    /// Run the noise-estimator benchmark on synthetic signals.
    Table1(Options),
}

#[derive(Args)]
struct Common {
    /// Records CSV with columns road_id,day,slice,velocity[,road_length].
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    options: Options,
}

#[derive(Args)]
struct Options {
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fixed noise strength instead of per road-day estimates.
    #[arg(long)]
    sigma: Option<f64>,
    /// Comma-separated sigma grid, starting at 0.
    #[arg(long)]
    grid: Option<String>,
    /// Number of clusters; chosen from the decision graph when absent.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    dc_percentile: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Skip denoising (raw pipeline only).
    #[arg(long)]
    no_denoise: bool,
}

impl Options {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        if let Some(s) = self.sigma {
            cfg.sigma = Some(s);
        }
        if let Some(g) = &self.grid {
            cfg.sigma_grid = parse_grid(g).context("--grid")?;
        }
        if let Some(k) = self.k {
            cfg.k = Some(k);
        }
        if let Some(p) = self.dc_percentile {
            cfg.dc_percentile = p;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.no_denoise {
            cfg.denoise = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    let summary = match &cli.command {
        Command::Denoise(c) => cmd_denoise(&c.input, &c.options.resolve()?)?,
        Command::EstimateSigma(c) => cmd_estimate(&c.input, &c.options.resolve()?)?,
        Command::Cluster(c) => cmd_cluster(&c.input, &c.options.resolve()?)?,
        Command::Predict(c) => cmd_predict(&c.input, &c.options.resolve()?)?,
        Command::Table1(o) => cmd_table1(&o.resolve()?)?,
    };
    log::info!("done: {} processed, {} failed", summary.processed, summary.failed);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
