use std::path::PathBuf;

use serde::Serialize;

use bridgestain::metrics::cv_map;
use bridgestain::rng;
use bridgestain::sampler::SamplerConfig;
use bridgestain::{Error, Result};

use crate::common;
use crate::csvout;

/// Domain-separation tag for repeated-inference seeds.
const TAG_CV: u64 = 0xC0F7;

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Directory for CV maps, cv.csv, and the resolved config.
    #[arg(long)]
    out: PathBuf,
    /// Independent inferences per tile (at least 2).
    #[arg(long, default_value_t = 5)]
    runs: usize,
    /// vanilla, mean, or skip.
    #[arg(long, default_value = "vanilla")]
    strategy: String,
    #[arg(long, default_value_t = 50)]
    exit: usize,
    /// Chains averaged within each inference.
    #[arg(long, default_value_t = 1)]
    avg: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    clip_x0: bool,
    /// Report only the first N tiles of the split.
    #[arg(long)]
    count: Option<usize>,
    /// Skip the PNG heat renderings.
    #[arg(long)]
    no_png: bool,
}

#[derive(Serialize)]
struct ResolvedConfig<'a> {
    checkpoint: &'a PathBuf,
    data: &'a PathBuf,
    split: &'a str,
    runs: usize,
    sampler: &'a SamplerConfig,
    count: Option<usize>,
    png: bool,
}

pub fn run(args: Args) -> Result<()> {
    if args.runs < 2 {
        return Err(Error::InvalidConfig("cv needs at least 2 runs per tile".into()));
    }
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

    let reports = common::par_tiles(&ckpt.model, &tiles, |model, i, _id, y0| {
        let mut outputs = Vec::with_capacity(args.runs);
        for rep in 0..args.runs {
            let seeds: Vec<u64> = (0..args.avg as u64)
                .map(|k| rng::key(args.seed, &[TAG_CV, i as u64, rep as u64, k]))
                .collect();
            let run = common::run_tile(model, &ckpt.meta, &ckpt.schedule, y0, &config, &seeds)?;
            outputs.push(run.mean);
        }
        cv_map(&outputs)
    })?;

    let mut rows = Vec::with_capacity(reports.len());
    for (i, report) in reports.iter().enumerate() {
        let id = &tiles.ids[i];
        report.map.write_btns(args.out.join(format!("{id}_cv.btns")))?;
        if !args.no_png {
            report.map.write_png(args.out.join(format!("{id}_cv.png")))?;
        }
        let [y, cb, cr] = report.mean_per_channel;
        rows.push(vec![
            id.clone(),
            csvout::num(report.mean_cv),
            csvout::num(y),
            csvout::num(cb),
            csvout::num(cr),
            report.guarded.to_string(),
        ]);
    }

    csvout::write(
        &args.out.join("cv.csv"),
        &["image_id", "mean_cv", "y_cv", "cb_cv", "cr_cv", "guarded"],
        &rows,
    )?;
    common::write_json(
        &args.out.join("resolved-config.json"),
        &ResolvedConfig {
            checkpoint: &args.checkpoint,
            data: &args.data,
            split: &args.split,
            runs: args.runs,
            sampler: &config,
            count: args.count,
            png: !args.no_png,
        },
    )?;

    println!(
        "cv over {} runs x {} tiles -> {}",
        args.runs,
        tiles.ids.len(),
        args.out.display()
    );
    Ok(())
}
