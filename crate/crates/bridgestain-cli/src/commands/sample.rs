use std::path::PathBuf;

use serde::Serialize;

use bridgestain::sampler::SamplerConfig;
use bridgestain::Result;

use crate::common;

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory providing the conditioning inputs.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
    /// vanilla, mean, or skip.
    #[arg(long, default_value = "mean")]
    strategy: String,
    /// Exit point t_e.
    #[arg(long, default_value_t = 50)]
    exit: usize,
    /// Independent chains averaged per tile.
    #[arg(long, default_value_t = 1)]
    avg: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Clip the implied clean estimate to channel bounds inside the chain.
    #[arg(long)]
    clip_x0: bool,
    /// Sample only the first N tiles of the split.
    #[arg(long)]
    count: Option<usize>,
    /// Skip the 8-bit PNG previews (raw tensors are always written).
    #[arg(long)]
    no_png: bool,
}

#[derive(Serialize)]
struct TileRecord {
    id: String,
    seeds: Vec<u64>,
    denoiser_evals: u64,
    wall_ms: f64,
}

#[derive(Serialize)]
struct RunManifest {
    strategy: String,
    exit_point: usize,
    averaging: usize,
    base_seed: u64,
    clip_x0: bool,
    split: String,
    tiles: Vec<TileRecord>,
    total_denoiser_evals: u64,
    total_wall_ms: f64,
}

/// Fully resolved invocation, echoed next to the outputs.
#[derive(Serialize)]
struct ResolvedConfig<'a> {
    checkpoint: &'a PathBuf,
    data: &'a PathBuf,
    split: &'a str,
    sampler: &'a SamplerConfig,
    count: Option<usize>,
    png: bool,
}

pub fn run(args: Args) -> Result<()> {
    let manifest = common::load_manifest(&args.data)?;
    let split = common::parse_split(&args.split)?;
    let ckpt = common::load_checkpoint(&args.checkpoint)?;
    common::check_compat(&ckpt.meta, &manifest)?;

    let config = SamplerConfig {
        strategy: common::parse_strategy(&args.strategy)?,
        exit_point: args.exit,
        averaging: args.avg,
        seed: args.seed,
        clip_x0: args.clip_x0,
    };
    config.validate(ckpt.schedule.steps())?;

    let tiles = common::load_tiles(&args.data, &manifest, split, args.count)?;
    std::fs::create_dir_all(&args.out)?;

    let avg = args.avg as u64;
    let results = common::par_tiles(&ckpt.model, &tiles, |model, i, _id, y0| {
        let seeds: Vec<u64> = (0..avg)
            .map(|k| args.seed.wrapping_add(i as u64 * avg + k))
            .collect();
        let run = common::run_tile(model, &ckpt.meta, &ckpt.schedule, y0, &config, &seeds)?;
        Ok((seeds, run))
    })?;

    let mut records = Vec::with_capacity(results.len());
    let mut total_evals = 0u64;
    let mut total_wall = 0.0;
    for (i, (seeds, run)) in results.into_iter().enumerate() {
        let id = &tiles.ids[i];
        run.mean.write_btns(common::output_file(&args.out, id))?;
        if !args.no_png {
            run.mean.write_png(args.out.join(format!("{id}_output.png")))?;
        }
        if args.avg > 1 {
            for (k, chain) in run.runs.iter().enumerate() {
                chain.write_btns(args.out.join(format!("{id}_run{k}.btns")))?;
                if !args.no_png {
                    chain.write_png(args.out.join(format!("{id}_run{k}.png")))?;
                }
            }
        }
        total_evals += run.denoiser_evals;
        total_wall += run.wall_ms;
        records.push(TileRecord {
            id: id.clone(),
            seeds,
            denoiser_evals: run.denoiser_evals,
            wall_ms: run.wall_ms,
        });
    }

    let run_manifest = RunManifest {
        strategy: config.strategy.to_string(),
        exit_point: config.exit_point,
        averaging: config.averaging,
        base_seed: config.seed,
        clip_x0: config.clip_x0,
        split: args.split.clone(),
        tiles: records,
        total_denoiser_evals: total_evals,
        total_wall_ms: total_wall,
    };
    common::write_json(&args.out.join("run-manifest.json"), &run_manifest)?;
    common::write_json(
        &args.out.join("resolved-config.json"),
        &ResolvedConfig {
            checkpoint: &args.checkpoint,
            data: &args.data,
            split: &args.split,
            sampler: &config,
            count: args.count,
            png: !args.no_png,
        },
    )?;

    println!(
        "sampled {} tiles ({} strategy, {} denoiser evals) -> {}",
        tiles.ids.len(),
        config.strategy,
        total_evals,
        args.out.display()
    );
    Ok(())
}
