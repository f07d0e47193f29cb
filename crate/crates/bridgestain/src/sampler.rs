//! Reverse-process execution: vanilla, mean, and skip sampling strategies,
//! pixel-wise averaging over repeated chains, and seeded reproducibility.
//!
//! Chains run in normalized space on planar [`Feat`] maps. Per-step noise is
//! a pure function of (chain seed, t), so two strategies sharing a seed walk
//! bit-identical trajectories until the first step where they differ by
//! construction.

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::imageops::{self, NormalizationStats};
use crate::nn::conditioner::Conditioner;
use crate::nn::feat::Feat;
use crate::schedule::{step_noise, BridgeSchedule};
use crate::tensor::{ImageTensor, Semantics};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Vanilla,
    Mean,
    Skip,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::Vanilla => write!(f, "vanilla"),
            Strategy::Mean => write!(f, "mean"),
            Strategy::Skip => write!(f, "skip"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    /// Step at which the strategy switches regime (deterministic updates for
    /// mean, direct exit for skip). Ignored by vanilla.
    #[serde(default = "default_exit_point")]
    pub exit_point: usize,
    /// Number of independent chains to average.
    #[serde(default = "default_averaging")]
    pub averaging: usize,
    pub seed: u64,
    /// Clip the implied x̂₀ to the declared channel bounds inside the chain.
    #[serde(default)]
    pub clip_x0: bool,
}

fn default_exit_point() -> usize {
    50
}

fn default_averaging() -> usize {
    1
}

impl SamplerConfig {
    pub fn validate(&self, steps: usize) -> Result<()> {
        if self.exit_point > steps {
            return Err(Error::InvalidConfig(format!(
                "exit point {} exceeds schedule length {steps}",
                self.exit_point
            )));
        }
        if self.averaging < 1 {
            return Err(Error::InvalidConfig("averaging count must be at least 1".into()));
        }
        Ok(())
    }
}

/// One reverse transition with injected noise: x_{t−1} = μ′_t + √δ̃_t · z.
///
/// At t = T this is the pinned-terminal step (the bridge marginal at T−1
/// around the implied x̂₀); at t = 1 it is automatically noiseless because
/// δ̃₁ = 0.
pub fn vanilla_step(
    schedule: &BridgeSchedule,
    t: usize,
    x_t: &Feat,
    y: &Feat,
    denoiser: &mut dyn Denoiser,
    seed: u64,
) -> Result<Feat> {
    if t == 0 || t > schedule.steps() {
        return Err(Error::InvalidStep { t, lo: 1, hi: schedule.steps() });
    }
    let eps = denoiser.evaluate(x_t, y, t, seed);
    let mut out = Feat::zeros(x_t.c, x_t.h, x_t.w);
    schedule.posterior_mean(t, &x_t.data, &y.data, &eps.data, &mut out.data)?;
    let sd = schedule.delta_tilde[t].sqrt();
    if sd > 0.0 {
        let z = step_noise(seed, t, out.data.len());
        for (o, zv) in out.data.iter_mut().zip(z) {
            *o += sd * zv;
        }
    }
    Ok(out)
}

/// One deterministic reverse transition: x_{t−1} = μ′_t exactly. Valid for
/// interior steps only (1 ≤ t ≤ T−1).
pub fn mean_step(
    schedule: &BridgeSchedule,
    t: usize,
    x_t: &Feat,
    y: &Feat,
    denoiser: &mut dyn Denoiser,
    seed: u64,
) -> Result<Feat> {
    if t == 0 || t >= schedule.steps() {
        return Err(Error::InvalidStep { t, lo: 1, hi: schedule.steps() - 1 });
    }
    let eps = denoiser.evaluate(x_t, y, t, seed);
    let mut out = Feat::zeros(x_t.c, x_t.h, x_t.w);
    schedule.posterior_mean(t, &x_t.data, &y.data, &eps.data, &mut out.data)?;
    Ok(out)
}

/// Direct exit: x̂₀ = x_{t_e} − ε̂(x_{t_e}, t_e).
pub fn skip_exit(
    schedule: &BridgeSchedule,
    t_e: usize,
    x_te: &Feat,
    y: &Feat,
    denoiser: &mut dyn Denoiser,
    seed: u64,
) -> Result<Feat> {
    if t_e == 0 || t_e > schedule.steps() {
        return Err(Error::InvalidStep { t: t_e, lo: 1, hi: schedule.steps() });
    }
    let eps = denoiser.evaluate(x_te, y, t_e, seed);
    let mut out = Feat::zeros(x_te.c, x_te.h, x_te.w);
    schedule.x0_from_eps(t_e, &x_te.data, &eps.data, &mut out.data)?;
    Ok(out)
}

/// Per-channel clamp of the implied x̂₀: modifies ε̂ so that x_t − ε̂ lies
/// within `bounds`.
fn clip_eps_to_bounds(x_t: &Feat, eps: &mut Feat, bounds: &[(f64, f64)]) {
    let hw = x_t.hw();
    for c in 0..x_t.c {
        let (lo, hi) = bounds[c];
        let xs = &x_t.data[c * hw..(c + 1) * hw];
        let es = &mut eps.data[c * hw..(c + 1) * hw];
        for (e, &x) in es.iter_mut().zip(xs) {
            let x0 = (x - *e).clamp(lo, hi);
            *e = x - x0;
        }
    }
}

/// Outcome of one chain in normalized space.
pub struct LatentRun {
    pub x0: Feat,
    pub denoiser_evals: u64,
}

/// Runs one reverse chain from x_T = y down to the strategy's endpoint, in
/// normalized space, and counts denoiser evaluations.
///
/// Strategy composition:
/// - vanilla: noisy transitions for every t from T to 1 (T evaluations);
/// - mean: noisy transitions for t > t_e, then deterministic mean updates
///   for t ≤ t_e (T evaluations);
/// - skip: noisy transitions while t > t_e + 1, then the evaluation at
///   t_e + 1 becomes a direct estimate x̂₀ = x_t − ε̂ (T − t_e evaluations);
///   t_e = T degenerates to the one-shot estimate from y itself.
pub fn sample_chain_latent(
    schedule: &BridgeSchedule,
    denoiser: &mut dyn Denoiser,
    y: &Feat,
    config: &SamplerConfig,
    seed: u64,
    clip_bounds: Option<&[(f64, f64)]>,
) -> Result<LatentRun> {
    config.validate(schedule.steps())?;
    let steps = schedule.steps();
    let t_e = config.exit_point;
    let mut evals = 0u64;
    let mut x = y.clone();

    let eval = |den: &mut dyn Denoiser, x: &Feat, t: usize, evals: &mut u64| -> Feat {
        *evals += 1;
        let mut eps = den.evaluate(x, y, t, seed);
        if let Some(b) = clip_bounds {
            if config.clip_x0 {
                clip_eps_to_bounds(x, &mut eps, b);
            }
        }
        eps
    };

    match config.strategy {
        Strategy::Vanilla | Strategy::Mean => {
            let noisy_floor = if config.strategy == Strategy::Mean { t_e } else { 0 };
            for t in (1..=steps).rev() {
                let eps = eval(denoiser, &x, t, &mut evals);
                let mut next = Feat::zeros(x.c, x.h, x.w);
                schedule.posterior_mean(t, &x.data, &y.data, &eps.data, &mut next.data)?;
                if t > noisy_floor {
                    let sd = schedule.delta_tilde[t].sqrt();
                    if sd > 0.0 {
                        let z = step_noise(seed, t, next.data.len());
                        for (o, zv) in next.data.iter_mut().zip(z) {
                            *o += sd * zv;
                        }
                    }
                }
                x = next;
            }
        }
        Strategy::Skip => {
            if t_e == steps {
                // One-shot estimate straight from the endpoint.
                let eps = eval(denoiser, &x, steps, &mut evals);
                let mut out = Feat::zeros(x.c, x.h, x.w);
                schedule.x0_from_eps(steps, &x.data, &eps.data, &mut out.data)?;
                x = out;
            } else {
                for t in (t_e + 2..=steps).rev() {
                    let eps = eval(denoiser, &x, t, &mut evals);
                    let mut next = Feat::zeros(x.c, x.h, x.w);
                    schedule.posterior_mean(t, &x.data, &y.data, &eps.data, &mut next.data)?;
                    let sd = schedule.delta_tilde[t].sqrt();
                    if sd > 0.0 {
                        let z = step_noise(seed, t, next.data.len());
                        for (o, zv) in next.data.iter_mut().zip(z) {
                            *o += sd * zv;
                        }
                    }
                    x = next;
                }
                let t = t_e + 1;
                let eps = eval(denoiser, &x, t, &mut evals);
                let mut out = Feat::zeros(x.c, x.h, x.w);
                schedule.x0_from_eps(t, &x.data, &eps.data, &mut out.data)?;
                x = out;
            }
        }
    }
    Ok(LatentRun { x0: x, denoiser_evals: evals })
}

/// Everything a full-image sampling run needs besides the config.
pub struct SamplePipeline<'a> {
    pub schedule: &'a BridgeSchedule,
    pub conditioner: &'a mut Conditioner,
    pub denoiser: &'a mut dyn Denoiser,
    /// Statistics the low-resolution input stack was normalized with.
    pub input_stats: &'a NormalizationStats,
    /// Statistics of the target space; the chain runs in this space.
    pub target_stats: &'a NormalizationStats,
    /// Declared range of the final output image.
    pub output_range: (f64, f64),
}

impl SamplePipeline<'_> {
    /// Normalized channel bounds of the target space, for optional mid-chain
    /// clipping of the implied x̂₀.
    fn latent_bounds(&self) -> Vec<(f64, f64)> {
        let (lo, hi) = self.output_range;
        self.target_stats
            .mean
            .iter()
            .zip(&self.target_stats.std)
            .map(|(m, s)| ((lo - m) / s, (hi - m) / s))
            .collect()
    }

    /// Computes the conditioning image y = f_c(y₀) in normalized space.
    pub fn condition(&mut self, y0: &ImageTensor) -> Result<Feat> {
        let y0n = imageops::normalize(y0, self.input_stats)?;
        Ok(self.conditioner.forward(&Feat::from_image(&y0n)))
    }

    fn finish(&self, x0: &Feat, clip: bool) -> Result<ImageTensor> {
        let mut mn = f64::INFINITY;
        let mut mx = f64::NEG_INFINITY;
        for &v in &x0.data {
            mn = mn.min(v);
            mx = mx.max(v);
        }
        let latent = x0.to_image(Semantics::NormalizedLatent, (mn, mx))?;
        // Denormalized values may exceed the declared range before the final
        // clip, so carry a wide range and retag afterwards.
        let (lo, hi) = self.output_range;
        let out =
            imageops::denormalize(&latent, self.target_stats, Semantics::Rgb, (lo.min(-1e18), hi.max(1e18)))?;
        let clipped = if clip { out.map(|v| v.clamp(lo, hi))? } else { out };
        ImageTensor::new(
            clipped.height(),
            clipped.width(),
            clipped.channels(),
            Semantics::Rgb,
            (lo, hi),
            clipped.data().to_vec(),
        )
    }
}

/// Outcome of a full-image run.
pub struct ChainRun {
    pub output: ImageTensor,
    pub denoiser_evals: u64,
    pub wall_ms: f64,
}

/// Full pipeline for one chain: condition, sample, denormalize, clip.
pub fn run_chain(
    pipeline: &mut SamplePipeline,
    y0: &ImageTensor,
    config: &SamplerConfig,
) -> Result<ChainRun> {
    config.validate(pipeline.schedule.steps())?;
    let start = std::time::Instant::now();
    let y = pipeline.condition(y0)?;
    let bounds = pipeline.latent_bounds();
    let run = sample_chain_latent(
        pipeline.schedule,
        pipeline.denoiser,
        &y,
        config,
        config.seed,
        config.clip_x0.then_some(bounds.as_slice()),
    )?;
    let output = pipeline.finish(&run.x0, true)?;
    Ok(ChainRun {
        output,
        denoiser_evals: run.denoiser_evals,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Outcome of an averaged run: the pixel-wise mean and the individual runs.
pub struct AveragedRun {
    pub mean: ImageTensor,
    pub runs: Vec<ImageTensor>,
    pub denoiser_evals: u64,
    pub wall_ms: f64,
}

/// Runs `seeds.len()` independent chains and averages them pixel-wise.
///
/// The seed list must match `config.averaging` and contain no duplicates:
/// averaging identical chains would silently report fake variance reduction.
pub fn run_averaged(
    pipeline: &mut SamplePipeline,
    y0: &ImageTensor,
    config: &SamplerConfig,
    seeds: &[u64],
) -> Result<AveragedRun> {
    config.validate(pipeline.schedule.steps())?;
    if seeds.len() != config.averaging {
        return Err(Error::InvalidConfig(format!(
            "averaging={} but {} seeds supplied",
            config.averaging,
            seeds.len()
        )));
    }
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidConfig("duplicate seeds in averaged run".into()));
    }
    let start = std::time::Instant::now();
    let y = pipeline.condition(y0)?;
    let bounds = pipeline.latent_bounds();
    let mut evals = 0u64;
    let mut latents = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let run = sample_chain_latent(
            pipeline.schedule,
            pipeline.denoiser,
            &y,
            config,
            seed,
            config.clip_x0.then_some(bounds.as_slice()),
        )?;
        evals += run.denoiser_evals;
        latents.push(run.x0);
    }
    let mut mean = Feat::zeros(latents[0].c, latents[0].h, latents[0].w);
    for l in &latents {
        for (m, &v) in mean.data.iter_mut().zip(&l.data) {
            *m += v;
        }
    }
    let inv = 1.0 / latents.len() as f64;
    mean.data.iter_mut().for_each(|v| *v *= inv);
    let runs = latents
        .iter()
        .map(|l| pipeline.finish(l, true))
        .collect::<Result<Vec<_>>>()?;
    let mean_img = pipeline.finish(&mean, true)?;
    Ok(AveragedRun {
        mean: mean_img,
        runs,
        denoiser_evals: evals,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
