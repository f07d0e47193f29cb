//! Shared plumbing: config files, dataset and checkpoint loading with
//! usage-friendly errors, and per-tile parallel sampling.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use bridgestain::checkpoint::{self, CheckpointMeta};
use bridgestain::nn::Model;
use bridgestain::sampler::{run_averaged, AveragedRun, SamplePipeline, SamplerConfig, Strategy};
use bridgestain::schedule::BridgeSchedule;
use bridgestain::synth::{self, DatasetManifest, Split};
use bridgestain::train::NetEval;
use bridgestain::{Error, ImageTensor, Result};

/// Reads a user-supplied JSON config file. Both a missing file and invalid
/// JSON are usage errors.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(Error::InvalidConfig(format!("config file {} not found", path.display())));
    }
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

/// Writes the resolved configuration next to a run's outputs.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("config is serializable");
    std::fs::write(path, json + "\n")?;
    Ok(())
}

/// Loads a dataset manifest, treating an absent dataset as a usage error.
pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    if !root.join("manifest.json").is_file() {
        return Err(Error::InvalidConfig(format!(
            "no dataset at {} (missing manifest.json)",
            root.display()
        )));
    }
    synth::load_manifest(root)
}

pub fn parse_split(name: &str) -> Result<Split> {
    match name {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(Error::InvalidConfig(format!("unknown split {other:?}"))),
    }
}

pub fn parse_strategy(name: &str) -> Result<Strategy> {
    match name {
        "vanilla" => Ok(Strategy::Vanilla),
        "mean" => Ok(Strategy::Mean),
        "skip" => Ok(Strategy::Skip),
        other => Err(Error::InvalidConfig(format!("unknown strategy {other:?}"))),
    }
}

/// Split ids, inputs, and targets, truncated to `count` when given.
pub struct Tiles {
    pub ids: Vec<String>,
    pub inputs: Vec<ImageTensor>,
    pub targets: Vec<ImageTensor>,
}

pub fn load_tiles(
    root: &Path,
    manifest: &DatasetManifest,
    split: Split,
    count: Option<usize>,
) -> Result<Tiles> {
    let (inputs, targets) = synth::load_split(root, manifest, split)?;
    let ids = match split {
        Split::Train => manifest.train_ids.clone(),
        Split::Test => manifest.test_ids.clone(),
    };
    let keep = count.unwrap_or(ids.len()).min(ids.len());
    if keep == 0 {
        return Err(Error::InvalidConfig("tile selection is empty".into()));
    }
    let mut tiles = Tiles { ids, inputs, targets };
    tiles.ids.truncate(keep);
    tiles.inputs.truncate(keep);
    tiles.targets.truncate(keep);
    Ok(tiles)
}

pub struct LoadedCheckpoint {
    pub model: Model,
    pub meta: CheckpointMeta,
    pub schedule: BridgeSchedule,
}

/// Loads a checkpoint, treating an absent file as a usage error.
pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    if !path.is_file() {
        return Err(Error::InvalidConfig(format!("checkpoint {} not found", path.display())));
    }
    let (model, meta) = checkpoint::load(path)?;
    let schedule = BridgeSchedule::new(meta.schedule_steps)?;
    Ok(LoadedCheckpoint { model, meta, schedule })
}

/// Confirms a checkpoint was trained for this dataset's geometry.
pub fn check_compat(meta: &CheckpointMeta, manifest: &DatasetManifest) -> Result<()> {
    let cfg = &manifest.config;
    if meta.conditioner.upsample != cfg.factor {
        return Err(Error::InvalidConfig(format!(
            "checkpoint upsamples x{}, dataset is binned x{}",
            meta.conditioner.upsample, cfg.factor
        )));
    }
    if meta.conditioner.in_channels != cfg.channels {
        return Err(Error::InvalidConfig(format!(
            "checkpoint expects {} input channels, dataset has {}",
            meta.conditioner.in_channels, cfg.channels
        )));
    }
    if meta.unet.base_size != cfg.size {
        return Err(Error::InvalidConfig(format!(
            "checkpoint expects {}-pixel tiles, dataset has {}",
            meta.unet.base_size, cfg.size
        )));
    }
    Ok(())
}

/// Runs one averaged inference for a single tile.
pub fn run_tile(
    model: &mut Model,
    meta: &CheckpointMeta,
    schedule: &BridgeSchedule,
    y0: &ImageTensor,
    config: &SamplerConfig,
    seeds: &[u64],
) -> Result<AveragedRun> {
    let mut denoiser = NetEval(&mut model.unet);
    let mut pipeline = SamplePipeline {
        schedule,
        conditioner: &mut model.cond,
        denoiser: &mut denoiser,
        input_stats: &meta.input_stats,
        target_stats: &meta.target_stats,
        output_range: meta.output_range,
    };
    run_averaged(&mut pipeline, y0, config, seeds)
}

/// Maps `f` over tiles in parallel, giving each worker its own model clone.
/// Results come back in tile order regardless of scheduling.
pub fn par_tiles<T, F>(model: &Model, tiles: &Tiles, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut Model, usize, &str, &ImageTensor) -> Result<T> + Sync,
{
    tiles
        .ids
        .par_iter()
        .zip(&tiles.inputs)
        .enumerate()
        .map_init(
            || model.clone(),
            |m, (i, (id, y0))| f(m, i, id, y0),
        )
        .collect()
}

/// File a sampled output tile is stored under, inside an output-set dir.
pub fn output_file(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}_output.btns"))
}
