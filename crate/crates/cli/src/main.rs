//! Command-line driver: data ingestion, analysis, simulation, plotting, and
//! configuration helpers. Exit codes: 0 success, 2 configuration error,
//! 3 data error, 4 numeric failure.

mod analyze;
mod config;
mod error;
mod ingest;
mod manifest;
mod output;
mod plot;
mod simulate;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{FileConfig, Overrides};
use error::{AppError, AppResult};

#[derive(Parser)]
#[command(
    name = "limark",
    version,
    about = "Global and local mark summary characteristics for composition-marked point patterns"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: GlobalFlags,
}

#[derive(Args)]
struct GlobalFlags {
    /// Configuration file (TOML); defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the worker count (0 = all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override the output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the permutation count
    #[arg(long, global = true)]
    permutations: Option<usize>,
    /// Override the significance level
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Override the kernel family (epanechnikov | box | gaussian)
    #[arg(long, global = true)]
    kernel: Option<String>,
    /// Override the bandwidth ("0.01" or "stoyan:0.15")
    #[arg(long, global = true)]
    bandwidth: Option<String>,
    /// Override the maximum grid distance
    #[arg(long, global = true)]
    rmax: Option<f64>,
    /// Override the number of grid points
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Override the transform for every statistic (clr | alr:REF | ilr)
    #[arg(long, global = true)]
    transform: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a CSV dataset and print its summary statistics
    Ingest {
        /// Input CSV with header row
        #[arg(long)]
        csv: PathBuf,
    },
    /// Run global and local envelope tests on a dataset
    Analyze {
        /// Input CSV with header row
        #[arg(long)]
        csv: PathBuf,
    },
    /// Run a simulation study (type-I error / power)
    Simulate {
        /// Scenario override (I | II | III | custom)
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Render SVG plots from an analysis output directory
    Plot {
        /// Directory containing plotdata.json (an analyze output directory)
        #[arg(long)]
        results: PathBuf,
    },
    /// Configuration helpers
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Subcommand)]
enum ConfigAction {
    /// Print the full default configuration as TOML
    ShowDefaults,
}

fn effective_config(flags: &GlobalFlags, scenario: Option<&String>) -> AppResult<FileConfig> {
    let mut config = FileConfig::load(flags.config.as_deref())?;
    let overrides = Overrides {
        seed: flags.seed,
        threads: flags.threads,
        out: flags.out.clone(),
        permutations: flags.permutations,
        alpha: flags.alpha,
        kernel: flags.kernel.clone(),
        bandwidth: flags.bandwidth.clone(),
        rmax: flags.rmax,
        grid: flags.grid,
        transform: flags.transform.clone(),
        scenario: scenario.cloned(),
    };
    config.apply_overrides(&overrides);
    // surface config-level problems before any compute
    config.parse_grid()?;
    config.parse_kernel()?;
    config.parse_track()?;
    config.parse_statistics()?;
    if !(config.envelope.alpha > 0.0 && config.envelope.alpha < 1.0) {
        return Err(AppError::config(format!(
            "envelope.alpha must lie in (0, 1), got {}",
            config.envelope.alpha
        )));
    }
    if config.envelope.permutations < 1 {
        return Err(AppError::config("envelope.permutations must be >= 1"));
    }
    Ok(config)
}

fn run(cli: Cli) -> AppResult<()> {
    match &cli.command {
        Command::Ingest { csv } => {
            let config = effective_config(&cli.flags, None)?;
            let out = ingest::ingest_csv(csv, &config.dataset)?;
            println!(
                "{} points in window [{}, {}] x [{}, {}]",
                out.summary.n_points,
                out.summary.window[0],
                out.summary.window[1],
                out.summary.window[2],
                out.summary.window[3]
            );
            print!("{}", ingest::format_summary_table(&out.summary));
            if let Some(dir) = &cli.flags.out {
                output::ensure_dir(dir)?;
                let path = dir.join("ingest_summary.json");
                let text = serde_json::to_string_pretty(&out.summary)
                    .map_err(|e| AppError::Numeric(e.to_string()))?;
                std::fs::write(&path, text)
                    .map_err(|e| AppError::Numeric(format!("cannot write {}: {e}", path.display())))?;
                println!("summary written to {}", path.display());
            }
            Ok(())
        }
        Command::Analyze { csv } => {
            let config = effective_config(&cli.flags, None)?;
            analyze::cmd_analyze(&config, csv)
        }
        Command::Simulate { scenario } => {
            let config = effective_config(&cli.flags, scenario.as_ref())?;
            simulate::cmd_simulate(&config).map(|_| ())
        }
        Command::Plot { results } => {
            let data = output::read_plot_data(&output::plot_data_path(results))?;
            let out_dir = cli
                .flags
                .out
                .clone()
                .unwrap_or_else(|| results.join("plots"));
            let written = plot::emit_plots(&data, &out_dir)?;
            println!("{} plot(s) written to {}", written.len(), out_dir.display());
            Ok(())
        }
        Command::Config { action } => match action {
            ConfigAction::ShowDefaults => {
                print!("{}", FileConfig::default().canonical_toml()?);
                Ok(())
            }
        },
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
