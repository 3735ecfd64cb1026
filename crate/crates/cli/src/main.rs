//! `dwpe`: simulate a microphone network, dereverberate it in single,
//! centralized or distributed mode, score the results and tabulate the
//! communication and arithmetic savings.

mod commands;
mod config;
mod error;
mod wav;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use error::CliResult;

#[derive(Parser)]
#[command(name = "dwpe", version, about = "Distributed WPE dereverberation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render observation, reference and impulse response WAVs per node.
    Simulate(RunArgs),
    /// Dereverberate the observations listed in a manifest.
    Dereverb(ManifestArgs),
    /// Score unprocessed and dereverberated signals against the references.
    Evaluate(ManifestArgs),
    /// Write transmission, reduction and operation-ratio tables.
    Report(RunArgs),
}

/// Flags override values from `--config`, which override built-in defaults.
#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long, env = "DWPE_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// Room scenario TOML file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Dry source WAV (16 kHz mono).
    #[arg(long)]
    clean: Option<PathBuf>,
    /// Synthetic source length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// single, centralized or distributed.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    delay: Option<usize>,
    #[arg(long)]
    filter_order: Option<usize>,
    #[arg(long)]
    psd_floor: Option<f64>,
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    collab_period: Option<usize>,
    /// Comma-separated report nodes.
    #[arg(long, value_delimiter = ',')]
    nodes: Option<Vec<usize>>,
    /// Largest synchronization lag in samples, 0 to disable.
    #[arg(long)]
    max_sync_lag: Option<usize>,
    /// Comma-separated network sizes for `report`.
    #[arg(long, value_delimiter = ',')]
    network_sizes: Option<Vec<usize>>,
}

#[derive(Args)]
struct ManifestArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Manifest written by `simulate`. Defaults to the one in the output
    /// directory.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> CliResult<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { c.$field = v.clone(); })*
            };
        }
        apply!(duration, seed, mode, delay, filter_order, psd_floor, ridge, max_iters, tol);
        apply!(nodes, max_sync_lag, network_sizes);
        if let Some(dir) = &self.out_dir {
            c.output_dir = dir.clone();
        }
        if self.scenario.is_some() {
            c.scenario = self.scenario.clone();
        }
        if self.clean.is_some() {
            c.clean = self.clean.clone();
        }
        if self.collab_period.is_some() {
            c.collab_period = self.collab_period;
        }
        c.validate()?;
        Ok(c)
    }
}

impl ManifestArgs {
    fn resolve(&self) -> CliResult<(RunConfig, PathBuf)> {
        let config = self.run.resolve()?;
        let manifest = self
            .manifest
            .clone()
            .unwrap_or_else(|| config.output_dir.join(commands::MANIFEST_FILE));
        Ok((config, manifest))
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(args) => {
            let config = args.resolve()?;
            let m = commands::cmd_simulate(&config)?;
            println!(
                "simulated {} nodes of {} into {}",
                m.n_nodes,
                m.scenario_id,
                config.output_dir.display()
            );
        }
        Command::Dereverb(args) => {
            let (config, manifest) = args.resolve()?;
            let s = commands::cmd_dereverb(&config, &manifest)?;
            println!(
                "{} run: {} estimates, {} iterations, T = {} per frame and bin",
                s.mode,
                s.estimates.len(),
                s.iterations,
                s.transmissions_per_frame_bin
            );
        }
        Command::Evaluate(args) => {
            let (config, manifest) = args.resolve()?;
            print!("{}", commands::cmd_evaluate(&config, &manifest)?);
        }
        Command::Report(args) => {
            let config = args.resolve()?;
            for path in commands::cmd_report(&config)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
