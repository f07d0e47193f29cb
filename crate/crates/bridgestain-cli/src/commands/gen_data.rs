use std::path::PathBuf;

use bridgestain::synth::{self, DatasetConfig};
use bridgestain::Result;

use crate::common;

#[derive(clap::Args)]
pub struct Args {
    /// Directory the dataset is written into.
    #[arg(long)]
    out: PathBuf,
    /// JSON dataset config; flags below override individual fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Target tile size in pixels.
    #[arg(long)]
    size: Option<usize>,
    /// Pixel-binning factor between target and input.
    #[arg(long)]
    factor: Option<usize>,
    /// Input channel count.
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    train_count: Option<usize>,
    #[arg(long)]
    test_count: Option<usize>,
    #[arg(long)]
    train_seed_start: Option<u64>,
    #[arg(long)]
    test_seed_start: Option<u64>,
}

pub fn run(args: Args) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => common::read_json::<DatasetConfig>(path)?,
        None => DatasetConfig::desk(),
    };
    if let Some(v) = args.size {
        config.size = v;
    }
    if let Some(v) = args.factor {
        config.factor = v;
    }
    if let Some(v) = args.channels {
        config.channels = v;
    }
    if let Some(v) = args.train_count {
        config.train_count = v;
    }
    if let Some(v) = args.test_count {
        config.test_count = v;
    }
    if let Some(v) = args.train_seed_start {
        config.train_seed_start = v;
    }
    if let Some(v) = args.test_seed_start {
        config.test_seed_start = v;
    }
    config.validate()?;

    std::fs::create_dir_all(&args.out)?;
    let manifest = synth::build_dataset(&args.out, &config)?;
    common::write_json(&args.out.join("resolved-config.json"), &config)?;
    println!(
        "wrote {} train + {} test pairs ({}x{} targets, x{} binned inputs, {} channels) to {}",
        manifest.train_ids.len(),
        manifest.test_ids.len(),
        config.size,
        config.size,
        config.factor,
        config.channels,
        args.out.display()
    );
    Ok(())
}
