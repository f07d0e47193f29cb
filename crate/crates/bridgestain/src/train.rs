//! Joint optimization of the conditioning head and the denoising U-Net.
//!
//! The loss for one sample is γ_t · mean((ε̂ − target)²) with the target and
//! the bridge state both built from the conditioner's output, so gradients
//! reach the conditioner along three paths: directly through the U-Net input,
//! through x_t, and through the regression target itself. All randomness is
//! drawn from per-step streams keyed off the configured seed, which makes
//! training traces bit-reproducible and resumable runs replay the exact
//! draws of an uninterrupted run at the same global step.

use crate::checkpoint::{self, CheckpointMeta};
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::imageops::{self, NormalizationStats, TransformId, TRANSFORM_COUNT};
use crate::nn::{Conditioner, ConditionerConfig, Feat, Model, UNet, UNetConfig};
use crate::rng::Stream;
use crate::schedule::BridgeSchedule;
use crate::tensor::ImageTensor;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

// One stream per randomness purpose per step; tags keep them independent.
const TAG_BATCH: u64 = 0xB41C;
const TAG_AUG: u64 = 0xA062;
const TAG_LOSS: u64 = 0x10F5;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from the base rate toward zero over `max_steps`.
    Cosine,
}

fn default_learning_rate() -> f64 {
    1e-4
}
fn default_batch_size() -> usize {
    8
}
fn default_weight_decay() -> f64 {
    0.01
}
fn default_grad_clip() -> f64 {
    1.0
}
fn default_augment() -> bool {
    true
}
fn default_log_every() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    /// Per-step loss weights γ_t, indexed t−1, length = schedule steps.
    /// `None` means uniform weights of 1.
    #[serde(default)]
    pub gamma: Option<Vec<f64>>,
    /// Base learning rate. Zero is legal and turns steps into dry runs that
    /// compute losses and gradients but leave parameters untouched.
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Global step budget; resumed runs continue toward the same total.
    pub max_steps: u64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Global-norm gradient clip threshold; zero disables clipping.
    #[serde(default = "default_grad_clip")]
    pub grad_clip: f64,
    pub seed: u64,
    /// Apply a random dihedral transform jointly to each drawn pair.
    #[serde(default = "default_augment")]
    pub augment: bool,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    /// Emit a checkpoint every this many steps; zero keeps only the final one.
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Warm-start checkpoint for fine-tuning; architecture must match.
    #[serde(default)]
    pub init_from: Option<PathBuf>,
}

impl TrainingConfig {
    pub fn new(max_steps: u64, seed: u64) -> Self {
        TrainingConfig {
            gamma: None,
            learning_rate: default_learning_rate(),
            lr_schedule: LrSchedule::Constant,
            batch_size: default_batch_size(),
            max_steps,
            weight_decay: default_weight_decay(),
            grad_clip: default_grad_clip(),
            seed,
            augment: default_augment(),
            log_every: default_log_every(),
            checkpoint_every: 0,
            init_from: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be finite and >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be at least 1".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("weight_decay must be finite and >= 0".into()));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            return Err(Error::InvalidConfig("grad_clip must be finite and >= 0".into()));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidConfig("log_every must be at least 1".into()));
        }
        if let Some(g) = &self.gamma {
            if g.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidConfig("gamma weights must be finite and >= 0".into()));
            }
        }
        Ok(())
    }

    /// Expands `gamma` to one weight per schedule step.
    pub fn resolved_gamma(&self, steps: usize) -> Result<Vec<f64>> {
        match &self.gamma {
            None => Ok(vec![1.0; steps]),
            Some(g) if g.len() == steps => Ok(g.clone()),
            Some(g) => Err(Error::InvalidConfig(format!(
                "gamma has {} weights but the schedule has {steps} steps",
                g.len()
            ))),
        }
    }

    /// Learning rate for the step with 0-based global index `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let frac = step.min(self.max_steps) as f64 / self.max_steps as f64;
                self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

/// One training example in the normalized latent domain.
#[derive(Debug, Clone)]
pub struct TrainPair {
    /// Conditioner input (low-resolution, pre-normalized).
    pub input: Feat,
    /// Ground-truth output image (full-resolution, pre-normalized).
    pub target: Feat,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleDetail {
    pub t: usize,
    pub loss: f64,
}

fn check_batch(batch: &[TrainPair], gamma: &[f64], steps: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("loss over an empty batch is undefined".into()));
    }
    if gamma.len() != steps {
        return Err(Error::InvalidConfig(format!(
            "gamma has {} weights but the schedule has {steps} steps",
            gamma.len()
        )));
    }
    Ok(())
}

fn check_cond_shape(y: &Feat, target: &Feat) -> Result<()> {
    if (y.c, y.h, y.w) != (target.c, target.h, target.w) {
        return Err(Error::InvalidInput(format!(
            "conditioner output {}x{}x{} does not match target {}x{}x{}",
            y.c, y.h, y.w, target.c, target.h, target.w
        )));
    }
    Ok(())
}

/// Per sample: one uniform step draw, then one standard normal per element.
fn draw_step_and_noise(stream: &mut Stream, steps: usize, len: usize) -> (usize, Vec<f64>) {
    let t = 1 + stream.next_index(steps);
    let mut eps = vec![0.0; len];
    for e in eps.iter_mut() {
        *e = stream.next_normal();
    }
    (t, eps)
}

fn bridge_pair(
    schedule: &BridgeSchedule,
    t: usize,
    x0: &Feat,
    y: &Feat,
    eps: &[f64],
) -> Result<(Feat, Vec<f64>)> {
    let mut x_t = Feat::zeros(x0.c, x0.h, x0.w);
    schedule.forward_sample(t, &x0.data, &y.data, eps, &mut x_t.data)?;
    let mut target = vec![0.0; x0.data.len()];
    schedule.training_target(t, &x0.data, &y.data, eps, &mut target)?;
    Ok((x_t, target))
}

/// Training loss of a batch under an arbitrary denoiser.
///
/// Per sample the stream supplies a uniform step t in [1, T] and one normal
/// draw per target element, in that order; the denoiser sees the sample index
/// as its noise key. Returns the batch mean and per-sample details.
pub fn batch_loss(
    schedule: &BridgeSchedule,
    conditioner: &mut Conditioner,
    denoiser: &mut dyn Denoiser,
    batch: &[TrainPair],
    gamma: &[f64],
    stream: &mut Stream,
) -> Result<(f64, Vec<SampleDetail>)> {
    check_batch(batch, gamma, schedule.steps())?;
    let mut details = Vec::with_capacity(batch.len());
    let mut total = 0.0;
    for (i, sample) in batch.iter().enumerate() {
        let (t, eps) = draw_step_and_noise(stream, schedule.steps(), sample.target.data.len());
        let y = conditioner.forward(&sample.input);
        check_cond_shape(&y, &sample.target)?;
        let (x_t, target) = bridge_pair(schedule, t, &sample.target, &y, &eps)?;
        let eps_hat = denoiser.evaluate(&x_t, &y, t, i as u64);
        if eps_hat.data.len() != target.len() {
            return Err(Error::InvalidInput("denoiser output size mismatch".into()));
        }
        let mut acc = 0.0;
        for (p, w) in eps_hat.data.iter().zip(&target) {
            let d = p - w;
            acc += d * d;
        }
        let loss = gamma[t - 1] * acc / target.len() as f64;
        total += loss;
        details.push(SampleDetail { t, loss });
    }
    Ok((total / batch.len() as f64, details))
}

/// Same loss as [`batch_loss`] (identical stream consumption), but evaluated
/// on the live model with gradients accumulated into it. The caller decides
/// when to zero gradients, so batches may be split across calls.
pub fn batch_loss_grad(
    schedule: &BridgeSchedule,
    model: &mut Model,
    batch: &[TrainPair],
    gamma: &[f64],
    stream: &mut Stream,
) -> Result<(f64, Vec<SampleDetail>)> {
    check_batch(batch, gamma, schedule.steps())?;
    let b = batch.len() as f64;
    let mut details = Vec::with_capacity(batch.len());
    let mut total = 0.0;
    for sample in batch {
        let (t, eps) = draw_step_and_noise(stream, schedule.steps(), sample.target.data.len());
        let y = model.cond.forward(&sample.input);
        check_cond_shape(&y, &sample.target)?;
        let (x_t, target) = bridge_pair(schedule, t, &sample.target, &y, &eps)?;
        let input = Feat::concat(&x_t, &y)?;
        let eps_hat = model.unet.forward(&input, t as f64);
        let n = target.len() as f64;
        let g = gamma[t - 1];
        let mut gout = Feat::zeros(sample.target.c, sample.target.h, sample.target.w);
        let mut acc = 0.0;
        for e in 0..target.len() {
            let d = eps_hat.data[e] - target[e];
            acc += d * d;
            gout.data[e] = 2.0 * g * d / (n * b);
        }
        let loss = g * acc / n;
        total += loss;
        details.push(SampleDetail { t, loss });
        let din = model.unet.backward(&gout);
        let (dxt, mut dy) = din.split(sample.target.c);
        // The conditioner feeds the loss three ways: as U-Net input, through
        // x_t, and through the regression target (whose gradient is −gout).
        let mt = schedule.m[t];
        for e in 0..dy.data.len() {
            dy.data[e] += mt * (dxt.data[e] - gout.data[e]);
        }
        model.cond.backward(&dy);
    }
    Ok((total / b, details))
}

/// Borrowing adapter so the loss of a live network can be evaluated through
/// the denoiser interface without moving the network out of its model.
pub struct NetEval<'a>(pub &'a mut UNet);

impl Denoiser for NetEval<'_> {
    fn evaluate(&mut self, x_t: &Feat, cond: &Feat, t: usize, _noise_key: u64) -> Feat {
        let input = Feat::concat(x_t, cond).expect("state and conditioning shapes pre-checked");
        self.0.forward(&input, t as f64)
    }
}

/// Paired dataset held in RAM, normalized once at construction.
#[derive(Debug, Clone)]
pub struct TrainSet {
    inputs: Vec<ImageTensor>,
    targets: Vec<ImageTensor>,
    pub input_stats: NormalizationStats,
    pub target_stats: NormalizationStats,
    /// Declared value range of the raw target images.
    pub output_range: (f64, f64),
}

impl TrainSet {
    /// Takes raw (unnormalized) paired images. All inputs must share one
    /// shape, all targets another, and all targets one declared range.
    pub fn new(
        inputs: Vec<ImageTensor>,
        targets: Vec<ImageTensor>,
        input_stats: NormalizationStats,
        target_stats: NormalizationStats,
    ) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::InvalidInput(format!(
                "{} inputs paired with {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if inputs.is_empty() {
            return Err(Error::InvalidInput("training set is empty".into()));
        }
        let dims = |t: &ImageTensor| (t.height(), t.width(), t.channels());
        if inputs.iter().any(|t| dims(t) != dims(&inputs[0])) {
            return Err(Error::InvalidInput("inputs have mixed shapes".into()));
        }
        if targets.iter().any(|t| dims(t) != dims(&targets[0])) {
            return Err(Error::InvalidInput("targets have mixed shapes".into()));
        }
        if targets.iter().any(|t| t.range() != targets[0].range()) {
            return Err(Error::InvalidInput("targets have mixed declared ranges".into()));
        }
        let output_range = targets[0].range();
        let inputs = inputs
            .iter()
            .map(|t| imageops::normalize(t, &input_stats))
            .collect::<Result<Vec<_>>>()?;
        let targets = targets
            .iter()
            .map(|t| imageops::normalize(t, &target_stats))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainSet { inputs, targets, input_stats, target_stats, output_range })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// (height, width, channels) of the conditioner inputs.
    pub fn input_dims(&self) -> (usize, usize, usize) {
        (self.inputs[0].height(), self.inputs[0].width(), self.inputs[0].channels())
    }

    /// (height, width, channels) of the targets.
    pub fn target_dims(&self) -> (usize, usize, usize) {
        (self.targets[0].height(), self.targets[0].width(), self.targets[0].channels())
    }

    /// Fetches pair `idx` with a dihedral transform applied to both sides.
    pub fn pair(&self, idx: usize, id: TransformId) -> Result<TrainPair> {
        let input = imageops::apply_transform(&self.inputs[idx], id)?;
        let target = imageops::apply_transform(&self.targets[idx], id)?;
        Ok(TrainPair { input: Feat::from_image(&input), target: Feat::from_image(&target) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    /// 1-based global step this row describes.
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

/// Owns the model, optimizer state, and step counter for one training run.
pub struct Trainer {
    model: Model,
    schedule: BridgeSchedule,
    config: TrainingConfig,
    unet_config: UNetConfig,
    cond_config: ConditionerConfig,
    data: TrainSet,
    gamma: Vec<f64>,
    opt_m: Vec<Vec<f64>>,
    opt_v: Vec<Vec<f64>>,
    /// Completed global steps (continues across resumes).
    step: u64,
    /// Steps taken by this trainer instance; drives moment bias correction,
    /// since optimizer moments are not part of the checkpoint format.
    local_steps: u64,
    pub history: Vec<LogRow>,
}

impl Trainer {
    pub fn new(
        config: TrainingConfig,
        schedule: BridgeSchedule,
        unet_config: UNetConfig,
        cond_config: ConditionerConfig,
        data: TrainSet,
    ) -> Result<Self> {
        config.validate()?;
        let gamma = config.resolved_gamma(schedule.steps())?;
        let (in_h, in_w, in_c) = data.input_dims();
        let (tgt_h, tgt_w, tgt_c) = data.target_dims();
        let up = cond_config.upsample;
        if cond_config.in_channels != in_c
            || cond_config.out_channels != tgt_c
            || in_h * up != tgt_h
            || in_w * up != tgt_w
        {
            return Err(Error::InvalidConfig(format!(
                "conditioner ({}ch -> {}ch, x{up}) does not map {in_h}x{in_w}x{in_c} \
                 inputs onto {tgt_h}x{tgt_w}x{tgt_c} targets",
                cond_config.in_channels, cond_config.out_channels
            )));
        }
        if unet_config.in_channels != tgt_c + cond_config.out_channels
            || unet_config.out_channels != tgt_c
        {
            return Err(Error::InvalidConfig(
                "denoiser channel counts do not match state plus conditioning".into(),
            ));
        }
        if tgt_h != tgt_w || unet_config.base_size != tgt_h {
            return Err(Error::InvalidConfig(format!(
                "denoiser expects square {0}x{0} targets, dataset has {tgt_h}x{tgt_w}",
                unet_config.base_size
            )));
        }
        if config.augment && in_h != in_w {
            return Err(Error::InvalidConfig(
                "dihedral augmentation needs square inputs".into(),
            ));
        }
        let (model, step) = match &config.init_from {
            None => (Model::new(config.seed, unet_config.clone(), cond_config.clone())?, 0),
            Some(path) => {
                let (model, meta) = checkpoint::load(path)?;
                if meta.unet != unet_config
                    || meta.conditioner != cond_config
                    || meta.schedule_steps != schedule.steps()
                {
                    return Err(Error::IncompatibleCheckpoint(format!(
                        "{} was trained under a different architecture or schedule",
                        path.display()
                    )));
                }
                (model, meta.step)
            }
        };
        let mut trainer = Trainer {
            model,
            schedule,
            config,
            unet_config,
            cond_config,
            data,
            gamma,
            opt_m: Vec::new(),
            opt_v: Vec::new(),
            step,
            local_steps: 0,
            history: Vec::new(),
        };
        trainer.model.visit(&mut |_, p| {
            trainer.opt_m.push(vec![0.0; p.len()]);
            trainer.opt_v.push(vec![0.0; p.len()]);
        });
        Ok(trainer)
    }

    pub fn steps_completed(&self) -> u64 {
        self.step
    }

    pub fn model_mut(&mut self) -> &mut Model {
        &mut self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn data(&self) -> &TrainSet {
        &self.data
    }

    /// Runs one optimization step at the current global step index.
    pub fn step_once(&mut self) -> Result<LogRow> {
        let started = Instant::now();
        let s = self.step;
        let seed = self.config.seed;
        let mut idx_stream = Stream::new(seed, &[TAG_BATCH, s]);
        let mut aug_stream = Stream::new(seed, &[TAG_AUG, s]);
        let mut loss_stream = Stream::new(seed, &[TAG_LOSS, s]);
        let mut batch = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            let idx = idx_stream.next_index(self.data.len());
            let id = if self.config.augment {
                aug_stream.next_index(TRANSFORM_COUNT as usize) as TransformId
            } else {
                0
            };
            batch.push(self.data.pair(idx, id)?);
        }
        self.model.zero_grad();
        let (loss, _) =
            batch_loss_grad(&self.schedule, &mut self.model, &batch, &self.gamma, &mut loss_stream)?;
        self.clip_gradients();
        let lr = self.config.lr_at(s);
        self.apply_adamw(lr);
        self.step += 1;
        self.local_steps += 1;
        let row = LogRow {
            step: self.step,
            loss,
            lr,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        self.history.push(row);
        Ok(row)
    }

    fn clip_gradients(&mut self) {
        let clip = self.config.grad_clip;
        if clip == 0.0 {
            return;
        }
        let mut sq = 0.0;
        self.model.visit(&mut |_, p| {
            for g in &p.g {
                sq += g * g;
            }
        });
        let norm = sq.sqrt();
        if norm > clip {
            let scale = clip / norm;
            self.model.visit(&mut |_, p| {
                for g in p.g.iter_mut() {
                    *g *= scale;
                }
            });
        }
    }

    fn apply_adamw(&mut self, lr: f64) {
        let k = self.local_steps as i32 + 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(k);
        let bc2 = 1.0 - ADAM_BETA2.powi(k);
        let wd = self.config.weight_decay;
        let (opt_m, opt_v) = (&mut self.opt_m, &mut self.opt_v);
        let mut ti = 0;
        self.model.visit(&mut |_, p| {
            let (m, v) = (&mut opt_m[ti], &mut opt_v[ti]);
            for i in 0..p.len() {
                let g = p.g[i];
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
                p.w[i] -= lr * (update + wd * p.w[i]);
            }
            ti += 1;
        });
    }

    /// Trains to the global step budget, writing periodic and final
    /// checkpoints when a directory is given.
    pub fn run(&mut self, checkpoint_dir: Option<&Path>) -> Result<()> {
        if let Some(dir) = checkpoint_dir {
            std::fs::create_dir_all(dir)?;
        }
        while self.step < self.config.max_steps {
            self.step_once()?;
            if let Some(dir) = checkpoint_dir {
                let every = self.config.checkpoint_every;
                if every > 0 && self.step % every == 0 && self.step < self.config.max_steps {
                    self.save_checkpoint(&dir.join(format!("step-{:06}.ckpt", self.step)))?;
                }
            }
        }
        if let Some(dir) = checkpoint_dir {
            self.save_checkpoint(&dir.join("final.ckpt"))?;
        }
        Ok(())
    }

    pub fn checkpoint_meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            unet: self.unet_config.clone(),
            conditioner: self.cond_config.clone(),
            schedule_steps: self.schedule.steps(),
            step: self.step,
            seed: self.config.seed,
            input_stats: self.data.input_stats.clone(),
            target_stats: self.data.target_stats.clone(),
            output_range: self.data.output_range,
            blobs: Vec::new(),
        }
    }

    pub fn save_checkpoint(&mut self, path: &Path) -> Result<()> {
        let meta = self.checkpoint_meta();
        checkpoint::save(path, &mut self.model, meta)
    }

    /// Writes the training log as CSV, keeping every `log_every`-th step and
    /// always the last one.
    pub fn write_log(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,loss,lr,wall_ms\r\n");
        let last = self.history.len();
        for (i, row) in self.history.iter().enumerate() {
            if row.step % self.config.log_every == 0 || i + 1 == last {
                out.push_str(&format!(
                    "{},{},{},{}\r\n",
                    row.step, row.loss, row.lr, row.wall_ms
                ));
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{ExactOracle, ZeroDenoiser};
    use crate::imageops::StatsScope;
    use crate::tensor::Semantics;

    fn tiny_unet_config() -> UNetConfig {
        UNetConfig {
            base_size: 8,
            in_channels: 6,
            out_channels: 3,
            levels: 2,
            base_width: 4,
            attention_heads: 2,
            attention_min_size: 4,
            time_embed_dim: 8,
        }
    }

    fn tiny_cond_config() -> ConditionerConfig {
        ConditionerConfig { in_channels: 2, hidden: 4, out_channels: 3, upsample: 2 }
    }

    fn raw_image(stream: &mut Stream, h: usize, w: usize, c: usize) -> ImageTensor {
        let data: Vec<f64> = (0..h * w * c).map(|_| stream.next_unit()).collect();
        ImageTensor::new(h, w, c, Semantics::AfStack, (0.0, 1.0), data).unwrap()
    }

    fn tiny_stats(c: usize) -> NormalizationStats {
        NormalizationStats::new(vec![0.5; c], vec![0.25; c], StatsScope::Dataset).unwrap()
    }

    fn tiny_set(pairs: usize) -> TrainSet {
        let mut stream = Stream::new(31, &[9]);
        let inputs: Vec<_> = (0..pairs).map(|_| raw_image(&mut stream, 4, 4, 2)).collect();
        let targets: Vec<_> = (0..pairs).map(|_| raw_image(&mut stream, 8, 8, 3)).collect();
        TrainSet::new(inputs, targets, tiny_stats(2), tiny_stats(3)).unwrap()
    }

    fn tiny_config(max_steps: u64) -> TrainingConfig {
        let mut config = TrainingConfig::new(max_steps, 77);
        config.batch_size = 2;
        config.learning_rate = 1e-3;
        config
    }

    fn tiny_trainer(max_steps: u64) -> Trainer {
        Trainer::new(
            tiny_config(max_steps),
            BridgeSchedule::new(20).unwrap(),
            tiny_unet_config(),
            tiny_cond_config(),
            tiny_set(5),
        )
        .unwrap()
    }

    /// Zero-initialized layers block gradient flow to everything upstream of
    /// them, so tests that need live gradients randomize those tensors.
    fn randomize_zero_params(model: &mut Model, seed: u64) {
        let mut stream = Stream::new(seed, &[4]);
        model.visit(&mut |_, p| {
            if p.w.iter().all(|v| *v == 0.0) {
                for v in p.w.iter_mut() {
                    *v = 0.05 * stream.next_normal();
                }
            }
        });
    }

    fn sample_batch(n: usize) -> Vec<TrainPair> {
        let set = tiny_set(n);
        (0..n).map(|i| set.pair(i, 0).unwrap()).collect()
    }

    #[test]
    fn empty_batch_is_invalid() {
        let schedule = BridgeSchedule::new(10).unwrap();
        let mut cond = Conditioner::new(&mut Stream::new(1, &[2]), tiny_cond_config()).unwrap();
        let mut den = ZeroDenoiser;
        let gamma = vec![1.0; 10];
        let mut stream = Stream::new(3, &[4]);
        let err = batch_loss(&schedule, &mut cond, &mut den, &[], &gamma, &mut stream);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn exact_oracle_reaches_zero_loss() {
        let schedule = BridgeSchedule::new(25).unwrap();
        let mut cond = Conditioner::new(&mut Stream::new(5, &[6]), tiny_cond_config()).unwrap();
        // The oracle must know the sample's clean image, so the batch repeats
        // one pair.
        let batch: Vec<_> = std::iter::repeat(sample_batch(1).remove(0)).take(3).collect();
        let mut den = ExactOracle { x0: batch[0].target.clone() };
        let gamma = vec![1.0; 25];
        let mut stream = Stream::new(7, &[8]);
        let (loss, details) =
            batch_loss(&schedule, &mut cond, &mut den, &batch, &gamma, &mut stream).unwrap();
        assert!(loss < 1e-12, "exact prediction should zero the loss, got {loss}");
        assert_eq!(details.len(), 3);
        assert!(details.iter().all(|d| d.loss < 1e-12));
    }

    #[test]
    fn zero_denoiser_loss_is_mean_target_norm() {
        let schedule = BridgeSchedule::new(25).unwrap();
        let mut stream_cond = Stream::new(5, &[6]);
        let mut cond = Conditioner::new(&mut stream_cond, tiny_cond_config()).unwrap();
        let batch = sample_batch(2);
        let gamma: Vec<f64> = (0..25).map(|t| 0.5 + 0.02 * t as f64).collect();
        let mut stream = Stream::new(7, &[8]);
        let (loss, details) =
            batch_loss(&schedule, &mut cond, &mut ZeroDenoiser, &batch, &gamma, &mut stream)
                .unwrap();
        // Replay the same draws and compute γ_t · mean(target²) by hand.
        let mut replay = Stream::new(7, &[8]);
        let mut expect_total = 0.0;
        for (sample, detail) in batch.iter().zip(&details) {
            let (t, eps) = draw_step_and_noise(&mut replay, 25, sample.target.data.len());
            assert_eq!(t, detail.t);
            let y = cond.forward(&sample.input);
            let (_, target) = bridge_pair(&schedule, t, &sample.target, &y, &eps).unwrap();
            let mean_sq = target.iter().map(|v| v * v).sum::<f64>() / target.len() as f64;
            let expect = gamma[t - 1] * mean_sq;
            assert!((detail.loss - expect).abs() < 1e-15);
            expect_total += expect;
        }
        assert!((loss - expect_total / 2.0).abs() < 1e-15);
    }

    #[test]
    fn grad_and_plain_loss_agree_bitwise() {
        let schedule = BridgeSchedule::new(20).unwrap();
        let mut model = Model::new(11, tiny_unet_config(), tiny_cond_config()).unwrap();
        randomize_zero_params(&mut model, 12);
        let batch = sample_batch(2);
        let gamma = vec![1.0; 20];
        let (plain, _) = batch_loss(
            &schedule,
            &mut model.cond,
            &mut NetEval(&mut model.unet),
            &batch,
            &gamma,
            &mut Stream::new(13, &[14]),
        )
        .unwrap();
        model.zero_grad();
        let (with_grad, _) =
            batch_loss_grad(&schedule, &mut model, &batch, &gamma, &mut Stream::new(13, &[14]))
                .unwrap();
        assert_eq!(plain.to_bits(), with_grad.to_bits());
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let schedule = BridgeSchedule::new(20).unwrap();
        let mut model = Model::new(21, tiny_unet_config(), tiny_cond_config()).unwrap();
        randomize_zero_params(&mut model, 22);
        let batch = sample_batch(2);
        let gamma = vec![1.0; 20];
        model.zero_grad();
        batch_loss_grad(&schedule, &mut model, &batch, &gamma, &mut Stream::new(23, &[24]))
            .unwrap();
        // Probe every conditioner tensor (they exercise all three gradient
        // paths) plus a spread of U-Net tensors.
        let mut probes: Vec<(usize, usize, f64, String)> = Vec::new();
        {
            let mut ti = 0;
            model.visit(&mut |name, p| {
                let probe_this = ti < 4 || ti % 5 == 0;
                if probe_this && p.len() > 0 {
                    probes.push((ti, p.len() / 2, p.g[p.len() / 2], name.to_string()));
                }
                ti += 1;
            });
        }
        assert!(probes.len() >= 10);
        let h = 1e-5;
        for (ti, idx, analytic, name) in probes {
            let mut eval_at = |delta: f64| -> f64 {
                let mut k = 0;
                model.visit(&mut |_, p| {
                    if k == ti {
                        p.w[idx] += delta;
                    }
                    k += 1;
                });
                let (loss, _) = batch_loss(
                    &schedule,
                    &mut model.cond,
                    &mut NetEval(&mut model.unet),
                    &batch,
                    &gamma,
                    &mut Stream::new(23, &[24]),
                )
                .unwrap();
                let mut k = 0;
                model.visit(&mut |_, p| {
                    if k == ti {
                        p.w[idx] -= delta;
                    }
                    k += 1;
                });
                loss
            };
            let fd = (eval_at(h) - eval_at(-h)) / (2.0 * h);
            if fd.abs() < 1e-10 && analytic.abs() < 1e-10 {
                continue;
            }
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs());
            assert!(rel < 1e-4, "{name}[{idx}]: analytic {analytic}, fd {fd}, rel {rel}");
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut config = tiny_config(2);
        config.learning_rate = 0.0;
        let mut trainer = Trainer::new(
            config,
            BridgeSchedule::new(20).unwrap(),
            tiny_unet_config(),
            tiny_cond_config(),
            tiny_set(5),
        )
        .unwrap();
        let mut before = Vec::new();
        trainer.model.visit(&mut |_, p| before.extend_from_slice(&p.w));
        trainer.run(None).unwrap();
        assert_eq!(trainer.steps_completed(), 2);
        let mut after = Vec::new();
        trainer.model.visit(&mut |_, p| after.extend_from_slice(&p.w));
        assert!(before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn same_seed_gives_bit_identical_runs() {
        let dir = tempfile::tempdir().unwrap();
        let mut losses = Vec::new();
        for run in 0..2 {
            let mut trainer = tiny_trainer(3);
            trainer.run(None).unwrap();
            losses.push(trainer.history.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>());
            trainer.save_checkpoint(&dir.path().join(format!("{run}.ckpt"))).unwrap();
        }
        assert_eq!(losses[0], losses[1]);
        assert_eq!(
            std::fs::read(dir.path().join("0.ckpt")).unwrap(),
            std::fs::read(dir.path().join("1.ckpt")).unwrap()
        );
    }

    #[test]
    fn one_step_moves_both_networks() {
        let mut trainer = tiny_trainer(1);
        let norms = |t: &mut Trainer| {
            let (mut cond, mut unet) = (0.0, 0.0);
            t.model.visit(&mut |name, p| {
                let sq: f64 = p.w.iter().map(|v| v * v).sum();
                if name.starts_with("cond.") {
                    cond += sq;
                } else {
                    unet += sq;
                }
            });
            (cond, unet)
        };
        let before = norms(&mut trainer);
        trainer.step_once().unwrap();
        let after = norms(&mut trainer);
        assert_ne!(before.0, after.0, "conditioner parameters did not move");
        assert_ne!(before.1, after.1, "denoiser parameters did not move");
    }

    #[test]
    fn resume_continues_toward_global_budget() {
        let dir = tempfile::tempdir().unwrap();
        let mut first = tiny_trainer(2);
        first.run(Some(dir.path())).unwrap();
        assert!(dir.path().join("final.ckpt").exists());

        let mut config = tiny_config(4);
        config.init_from = Some(dir.path().join("final.ckpt"));
        let mut resumed = Trainer::new(
            config.clone(),
            BridgeSchedule::new(20).unwrap(),
            tiny_unet_config(),
            tiny_cond_config(),
            tiny_set(5),
        )
        .unwrap();
        assert_eq!(resumed.steps_completed(), 2);
        resumed.run(None).unwrap();
        assert_eq!(resumed.steps_completed(), 4);
        assert_eq!(resumed.history.len(), 2);
        assert_eq!(resumed.history[0].step, 3);

        // A different architecture must be rejected outright.
        let mut wide = tiny_unet_config();
        wide.base_width = 8;
        let err = Trainer::new(
            config,
            BridgeSchedule::new(20).unwrap(),
            wide,
            tiny_cond_config(),
            tiny_set(5),
        );
        assert!(matches!(err, Err(Error::IncompatibleCheckpoint(_))));
    }

    #[test]
    fn periodic_checkpoints_are_emitted() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(4);
        config.checkpoint_every = 2;
        let mut trainer = Trainer::new(
            config,
            BridgeSchedule::new(20).unwrap(),
            tiny_unet_config(),
            tiny_cond_config(),
            tiny_set(5),
        )
        .unwrap();
        trainer.run(Some(dir.path())).unwrap();
        assert!(dir.path().join("step-000002.ckpt").exists());
        // The budget boundary is covered by final.ckpt, not a duplicate.
        assert!(!dir.path().join("step-000004.ckpt").exists());
        assert!(dir.path().join("final.ckpt").exists());
    }

    #[test]
    fn cosine_schedule_decays_to_zero() {
        let mut config = tiny_config(100);
        config.lr_schedule = LrSchedule::Cosine;
        assert_eq!(config.lr_at(0), config.learning_rate);
        let mid = config.lr_at(50);
        assert!((mid - 0.5 * config.learning_rate).abs() < 1e-12);
        assert!(config.lr_at(100) < 1e-15);
        assert!(config.lr_at(10) > config.lr_at(60));
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut config = tiny_config(0);
        assert!(matches!(config.validate(), Err(Error::InvalidConfig(_))));
        config = tiny_config(5);
        config.gamma = Some(vec![1.0, -0.5]);
        assert!(matches!(config.validate(), Err(Error::InvalidConfig(_))));
        config.gamma = Some(vec![1.0; 7]);
        assert!(config.validate().is_ok());
        assert!(matches!(config.resolved_gamma(20), Err(Error::InvalidConfig(_))));
        assert_eq!(config.resolved_gamma(7).unwrap().len(), 7);
        let schedule = BridgeSchedule::new(20).unwrap();
        let err = Trainer::new(
            config,
            schedule,
            tiny_unet_config(),
            tiny_cond_config(),
            tiny_set(2),
        );
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn log_csv_has_expected_shape() {
        let dir = tempfile::tempdir().unwrap();
        let mut trainer = tiny_trainer(3);
        trainer.run(None).unwrap();
        let path = dir.path().join("train.csv");
        trainer.write_log(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.split("\r\n").filter(|l| !l.is_empty()).collect();
        assert_eq!(lines[0], "step,loss,lr,wall_ms");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("1,"));
        let fields: Vec<&str> = lines[3].split(',').collect();
        assert_eq!(fields.len(), 4);
        assert!(fields[1].parse::<f64>().unwrap() > 0.0);
    }
}
