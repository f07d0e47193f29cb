use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use bridgestain::nn::{ConditionerConfig, UNetConfig};
use bridgestain::schedule::BridgeSchedule;
use bridgestain::synth::Split;
use bridgestain::train::{LrSchedule, Trainer, TrainingConfig, TrainSet};
use bridgestain::{Error, Result};

use crate::common;

fn default_schedule_steps() -> usize {
    600
}

/// Full training run description: schedule length, optimizer settings, and
/// (optionally) explicit network shapes. Missing networks default to the
/// desk-scale models sized from the dataset manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    #[serde(default = "default_schedule_steps")]
    pub schedule_steps: usize,
    pub training: TrainingConfig,
    #[serde(default)]
    pub unet: Option<UNetConfig>,
    #[serde(default)]
    pub conditioner: Option<ConditionerConfig>,
}

#[derive(clap::Args)]
pub struct Args {
    /// Dataset directory (from gen-data).
    #[arg(long)]
    data: PathBuf,
    /// Directory for checkpoints, the training log, and the resolved config.
    #[arg(long)]
    out: PathBuf,
    /// JSON run config; flags below override individual fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bridge schedule length T.
    #[arg(long)]
    steps: Option<usize>,
    /// Total optimizer steps (required unless --config provides it).
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Learning-rate schedule: constant or cosine.
    #[arg(long)]
    lr_schedule: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Disable dihedral augmentation.
    #[arg(long)]
    no_augment: bool,
    #[arg(long)]
    log_every: Option<u64>,
    /// Write step-NNNNNN.ckpt every this many steps (0 = final only).
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Resume from an existing checkpoint.
    #[arg(long)]
    init_from: Option<PathBuf>,
}

fn parse_lr_schedule(name: &str) -> Result<LrSchedule> {
    match name {
        "constant" => Ok(LrSchedule::Constant),
        "cosine" => Ok(LrSchedule::Cosine),
        other => Err(Error::InvalidConfig(format!("unknown lr schedule {other:?}"))),
    }
}

pub fn run(args: Args) -> Result<()> {
    let manifest = common::load_manifest(&args.data)?;

    let mut config = match &args.config {
        Some(path) => common::read_json::<TrainRunConfig>(path)?,
        None => {
            let max_steps = args.max_steps.ok_or_else(|| {
                Error::InvalidConfig("--max-steps is required without --config".into())
            })?;
            TrainRunConfig {
                schedule_steps: default_schedule_steps(),
                training: TrainingConfig::new(max_steps, args.seed.unwrap_or(0)),
                unet: None,
                conditioner: None,
            }
        }
    };
    if let Some(v) = args.steps {
        config.schedule_steps = v;
    }
    if let Some(v) = args.max_steps {
        config.training.max_steps = v;
    }
    if let Some(v) = args.batch_size {
        config.training.batch_size = v;
    }
    if let Some(v) = args.lr {
        config.training.learning_rate = v;
    }
    if let Some(name) = &args.lr_schedule {
        config.training.lr_schedule = parse_lr_schedule(name)?;
    }
    if let Some(v) = args.seed {
        config.training.seed = v;
    }
    if let Some(v) = args.weight_decay {
        config.training.weight_decay = v;
    }
    if let Some(v) = args.grad_clip {
        config.training.grad_clip = v;
    }
    if args.no_augment {
        config.training.augment = false;
    }
    if let Some(v) = args.log_every {
        config.training.log_every = v;
    }
    if let Some(v) = args.checkpoint_every {
        config.training.checkpoint_every = v;
    }
    if let Some(path) = &args.init_from {
        config.training.init_from = Some(path.clone());
    }
    if let Some(path) = &config.training.init_from {
        if !path.is_file() {
            return Err(Error::InvalidConfig(format!(
                "init checkpoint {} not found",
                path.display()
            )));
        }
    }

    let unet = config
        .unet
        .clone()
        .unwrap_or_else(|| UNetConfig::desk(manifest.config.size));
    let cond = config.conditioner.clone().unwrap_or_else(|| {
        ConditionerConfig::desk(manifest.config.channels, manifest.config.factor)
    });
    let resolved = TrainRunConfig {
        unet: Some(unet.clone()),
        conditioner: Some(cond.clone()),
        ..config.clone()
    };

    let (inputs, targets) = bridgestain::synth::load_split(&args.data, &manifest, Split::Train)?;
    let data = TrainSet::new(
        inputs,
        targets,
        manifest.input_stats.clone(),
        manifest.target_stats.clone(),
    )?;
    let schedule = BridgeSchedule::new(config.schedule_steps)?;

    let mut trainer = Trainer::new(config.training, schedule, unet, cond, data)?;
    std::fs::create_dir_all(&args.out)?;
    common::write_json(&args.out.join("resolved-config.json"), &resolved)?;
    trainer.run(Some(&args.out))?;
    trainer.write_log(&args.out.join("train-log.csv"))?;

    match trainer.history.last() {
        Some(last) => println!(
            "trained to step {} (final loss {:.6}); checkpoints in {}",
            trainer.steps_completed(),
            last.loss,
            args.out.display()
        ),
        None => println!(
            "checkpoint already at step {}; wrote final.ckpt unchanged",
            trainer.steps_completed()
        ),
    }
    Ok(())
}
