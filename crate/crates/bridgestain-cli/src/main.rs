//! `bridgestain`: command-line runner for the bridge-diffusion staining
//! pipeline — dataset generation, training, sampling, evaluation, sweeps,
//! and spectrum/variability reports.
//!
//! Exit codes: 0 on success, 2 for usage and configuration errors
//! (including missing user-supplied files), 3 for runtime and data errors.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod common;
mod csvout;

use commands::{cv_report, eval, gen_data, sample, schedule_dump, spectrum, sweep, train};

#[derive(Parser)]
#[command(name = "bridgestain", version, about = "Bridge-diffusion staining pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a paired synthetic dataset.
    GenData(gen_data::Args),
    /// Train the conditioner + denoiser pair on a dataset.
    Train(train::Args),
    /// Run the sampler over a dataset split and write output tiles.
    Sample(sample::Args),
    /// Score output sets against ground truth, with a paired t-test.
    Eval(eval::Args),
    /// Sweep exit points, averaging factors, or binning factors.
    Sweep(sweep::Args),
    /// Radially averaged power spectra of inputs, outputs, and truth.
    Spectrum(spectrum::Args),
    /// Pixel-wise coefficient of variation across repeated inferences.
    CvReport(cv_report::Args),
    /// Dump the bridge schedule tables as CSV.
    ScheduleDump(schedule_dump::Args),
}

/// Caps the worker pool when BRIDGESTAIN_THREADS is set.
fn init_threads() -> bridgestain::Result<()> {
    let Ok(raw) = std::env::var("BRIDGESTAIN_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().map_err(|_| {
        bridgestain::Error::InvalidConfig(format!(
            "BRIDGESTAIN_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    if threads == 0 {
        return Err(bridgestain::Error::InvalidConfig(
            "BRIDGESTAIN_THREADS must be at least 1".into(),
        ));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| bridgestain::Error::InvalidConfig(format!("thread pool: {e}")))
}

fn dispatch(command: Command) -> bridgestain::Result<()> {
    match command {
        Command::GenData(args) => gen_data::run(args),
        Command::Train(args) => train::run(args),
        Command::Sample(args) => sample::run(args),
        Command::Eval(args) => eval::run(args),
        Command::Sweep(args) => sweep::run(args),
        Command::Spectrum(args) => spectrum::run(args),
        Command::CvReport(args) => cv_report::run(args),
        Command::ScheduleDump(args) => schedule_dump::run(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|()| dispatch(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 3 })
        }
    }
}
