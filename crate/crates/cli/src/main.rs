//! `holotomo` command-line tool.
//!
//! Stages read and write under `<output>/<stage>/`:
//!
//! ```text
//! holotomo simulate           --config configs/desk64.toml
//! holotomo recon-holo         --config configs/desk64.toml
//! holotomo recon-conventional --config configs/desk64.toml
//! holotomo recon-tomo         --config configs/desk64.toml
//! holotomo metrics            --config configs/desk64.toml
//! ```

mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "holotomo", version, about = "Holotomography simulation and reconstruction with probe retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` of the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate the phantom, probe and measured dataset.
    Simulate,
    /// Joint object and probe reconstruction.
    ReconHolo,
    /// Flat-field division, MultiPaganin and probe-free refinement.
    ReconConventional,
    /// δ volumes from every available phase-retrieval output.
    ReconTomo,
    /// SSIM and error report against the ground truth.
    Metrics,
}

/// Error reported as `error[category]: message`.
#[derive(Debug)]
pub struct CliError {
    pub category: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(category: &'static str, message: impl Into<String>) -> Self {
        Self {
            category,
            message: message.into(),
        }
    }
}

impl From<holotomo::HoloError> for CliError {
    fn from(e: holotomo::HoloError) -> Self {
        CliError::new(e.category(), e.to_string())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .ok_or_else(|| CliError::new("invalid-config", "--config is required"))?;
    let mut cfg = RunConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::new("invalid-config", "--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::new("internal", e.to_string()))?;
    }
    match cli.command {
        Command::Simulate => stages::simulate(&cfg),
        Command::ReconHolo => stages::recon_holo(&cfg),
        Command::ReconConventional => stages::recon_conventional(&cfg),
        Command::ReconTomo => stages::recon_tomo(&cfg),
        Command::Metrics => stages::metrics(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.message.replace('\n', " ");
            eprintln!("error[{}]: {}", e.category, msg);
            ExitCode::FAILURE
        }
    }
}
