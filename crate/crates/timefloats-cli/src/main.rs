//! Command-line interface to the simulator: single-product traces,
//! variability sweeps, energy reports, the training demo, and a format
//! inspector. Every report opens with a reproducibility header; identical
//! config and seed reproduce identical bytes.

mod commands;
mod config;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "timefloats",
    version,
    about = "Simulator of an 8-bit floating-point time-domain scalar-product datapath",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Evaluate one scalar product and print the full datapath trace
    Mac(commands::MacArgs),
    /// Monte Carlo process-variability sweep; one CSV row per (sigma, mode)
    Sweep(commands::SweepArgs),
    /// Per-step energy breakdown and TOPS/W of one scalar product
    Energy(commands::EnergyArgs),
    /// Train the built-in classifier with the datapath doing the dot products
    Train(commands::TrainArgs),
    /// Inspect the 8-bit format: encode decimals, decode s:e:m codes
    Encode(commands::EncodeArgs),
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = commands::run(&cli.command) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
