//! Procedural paired-dataset generator: stain-like RGB targets with
//! consistent pseudo-autofluorescence inputs at a coarser pixel grid.
//!
//! A latent scene (nuclei blobs, band-pass stroma texture, smooth cytoplasm
//! mask) is rendered twice: through an absorbance model into the RGB target,
//! and through fixed nonlinear channel mixes into a full-resolution
//! pseudo-autofluorescence stack that is then pixel-binned. Both views are
//! pure functions of the sample seed, so pairing is exact by construction.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::{self, NormalizationStats, StatsAccumulator, StatsScope};
use crate::rng::Stream;
use crate::tensor::{ImageTensor, Semantics};

/// Stream tag for scene construction.
const TAG_SCENE: u64 = 0x5C3E;
/// Manifest schema version.
pub const FORMAT_VERSION: u32 = 1;
/// Smallest supported tile edge (keeps blur kernels inside one reflection).
pub const MIN_SIZE: usize = 16;

/// Per-unit-density transmittance exponents for the two dyes, RGB order.
const HEMATOXYLIN_OD: [f64; 3] = [0.65, 0.70, 0.29];
const EOSIN_OD: [f64; 3] = [0.07, 0.99, 0.11];
/// Global absorbance gain.
const ABSORBANCE: f64 = 1.2;

/// One generated sample: the RGB target and its paired low-resolution
/// pseudo-autofluorescence stack.
#[derive(Debug, Clone)]
pub struct PairedSample {
    pub target: ImageTensor,
    pub input: ImageTensor,
    pub seed: u64,
    pub factor: usize,
    pub channels: usize,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Separable Gaussian blur with reflected borders on a square field.
fn blur(field: &[f64], n: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    assert!(radius < n as isize, "kernel does not fit the field");
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for k in -radius..=radius {
        kernel.push((-0.5 * (k as f64 / sigma).powi(2)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for w in &mut kernel {
        *w /= norm;
    }
    let reflect = |i: isize| -> usize {
        let m = if i < 0 { -i - 1 } else if i >= n as isize { 2 * n as isize - 1 - i } else { i };
        m as usize
    };
    let mut rows = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let mut acc = 0.0;
            for (ki, w) in kernel.iter().enumerate() {
                acc += w * field[y * n + reflect(x as isize + ki as isize - radius)];
            }
            rows[y * n + x] = acc;
        }
    }
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let mut acc = 0.0;
            for (ki, w) in kernel.iter().enumerate() {
                acc += w * rows[reflect(y as isize + ki as isize - radius) * n + x];
            }
            out[y * n + x] = acc;
        }
    }
    out
}

/// Shifts to zero mean and scales to unit population std in place.
fn standardize(field: &mut [f64]) {
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let var = field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-12);
    for v in field.iter_mut() {
        *v = (*v - mean) / std;
    }
}

/// Latent scene fields at full resolution, each of length `size²`.
struct Scene {
    size: usize,
    /// Soft union of elliptical blobs, in (0, 1).
    nuclei: Vec<f64>,
    /// Squashed band-pass texture, in (0, 1).
    stroma: Vec<f64>,
    /// Smooth coverage mask, in (0, 1).
    cyto: Vec<f64>,
    /// Signed unit-std band-pass field behind `stroma`.
    dog: Vec<f64>,
}

fn latent_scene(seed: u64, size: usize) -> Scene {
    let n = size;
    let mut blobs = Stream::new(seed, &[TAG_SCENE, 0]);
    let count = (n * n / 80).max(6) + blobs.next_index(4);
    let mut nuclei = vec![1.0; n * n];
    for _ in 0..count {
        let cx = blobs.next_range(0.0, n as f64);
        let cy = blobs.next_range(0.0, n as f64);
        let ra = blobs.next_range(n as f64 / 12.0, n as f64 / 6.0);
        let rb = blobs.next_range(n as f64 / 12.0, n as f64 / 6.0);
        let theta = blobs.next_range(0.0, std::f64::consts::PI);
        let (sin, cos) = theta.sin_cos();
        for y in 0..n {
            for x in 0..n {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let u = (dx * cos + dy * sin) / ra;
                let v = (-dx * sin + dy * cos) / rb;
                let d = (u * u + v * v).sqrt();
                nuclei[y * n + x] *= 1.0 - sigmoid(12.0 * (1.0 - d));
            }
        }
    }
    for v in &mut nuclei {
        *v = 1.0 - *v;
    }

    let mut noise = Stream::new(seed, &[TAG_SCENE, 1]);
    let white: Vec<f64> = (0..n * n).map(|_| noise.next_normal()).collect();
    let narrow = blur(&white, n, 1.0);
    let wide = blur(&white, n, 2.5);
    let mut dog: Vec<f64> = narrow.iter().zip(&wide).map(|(a, b)| a - b).collect();
    standardize(&mut dog);
    let stroma: Vec<f64> = dog.iter().map(|&z| sigmoid(4.0 * z)).collect();

    let mut noise = Stream::new(seed, &[TAG_SCENE, 2]);
    let white: Vec<f64> = (0..n * n).map(|_| noise.next_normal()).collect();
    let mut cyto = blur(&white, n, 3.0);
    standardize(&mut cyto);
    for v in &mut cyto {
        *v = sigmoid(2.0 * *v);
    }

    Scene { size: n, nuclei, stroma, cyto, dog }
}

/// Two-dye absorbance rendering of the scene into an RGB tile in [0, 1].
fn render_target(scene: &Scene) -> ImageTensor {
    let n = scene.size;
    let mut data = Vec::with_capacity(n * n * 3);
    for i in 0..n * n {
        let (nu, st, cy) = (scene.nuclei[i], scene.stroma[i], scene.cyto[i]);
        let d_h = 1.1 * nu + 0.18 * cy * (1.0 - nu);
        let d_e = 0.45 * st * (1.0 - 0.6 * nu) + 0.25 * cy;
        for c in 0..3 {
            let od = HEMATOXYLIN_OD[c] * d_h + EOSIN_OD[c] * d_e;
            data.push((-ABSORBANCE * od).exp());
        }
    }
    ImageTensor::new(n, n, 3, Semantics::Rgb, (0.0, 1.0), data)
        .expect("scene dimensions are consistent")
}

fn check_channels(channels: usize) -> Result<()> {
    if !(2..=4).contains(&channels) {
        return Err(Error::InvalidInput(format!(
            "autofluorescence stack supports 2 to 4 channels, got {channels}"
        )));
    }
    Ok(())
}

/// Full-resolution pseudo-autofluorescence stack for `seed`: fixed nonlinear
/// mixes of the latent fields with per-channel gamma, before any binning.
pub fn af_stack(seed: u64, size: usize, channels: usize) -> Result<ImageTensor> {
    check_channels(channels)?;
    if size < MIN_SIZE {
        return Err(Error::InvalidInput(format!(
            "tile size {size} is below the minimum {MIN_SIZE}"
        )));
    }
    let scene = latent_scene(seed, size);
    render_af(&scene, channels)
}

fn render_af(scene: &Scene, channels: usize) -> Result<ImageTensor> {
    let n = scene.size;
    let mut data = Vec::with_capacity(n * n * channels);
    for i in 0..n * n {
        let (nu, st, cy, z) = (scene.nuclei[i], scene.stroma[i], scene.cyto[i], scene.dog[i]);
        let mixes = [
            clamp01(0.15 + 0.75 * nu + 0.10 * st).powf(0.8),
            clamp01(0.10 + 0.65 * cy + 0.15 * st).powf(1.4),
            clamp01(0.20 + 0.45 * st + 0.30 * nu * cy),
            clamp01(0.12 + 0.50 * (1.0 - nu) * cy + 0.25 * clamp01(0.5 + 0.5 * z)).powf(0.7),
        ];
        data.extend_from_slice(&mixes[..channels]);
    }
    ImageTensor::new(n, n, channels, Semantics::AfStack, (0.0, 1.0), data)
}

/// Generates one paired sample. The target is `size`×`size` RGB; the input is
/// the binned `channels`-deep pseudo-autofluorescence stack at
/// `size/factor` per edge. Fully determined by `seed`.
pub fn generate_pair(
    seed: u64,
    size: usize,
    factor: usize,
    channels: usize,
) -> Result<PairedSample> {
    check_channels(channels)?;
    if size < MIN_SIZE {
        return Err(Error::InvalidInput(format!(
            "tile size {size} is below the minimum {MIN_SIZE}"
        )));
    }
    if factor == 0 || size % factor != 0 {
        return Err(Error::InvalidInput(format!(
            "tile size {size} is not divisible by the binning factor {factor}"
        )));
    }
    let scene = latent_scene(seed, size);
    let target = render_target(&scene);
    let input = imageops::bin_pixels(&render_af(&scene, channels)?, factor)?;
    Ok(PairedSample { target, input, seed, factor, channels })
}

/// Build parameters for an on-disk dataset. Seed ranges are half-open:
/// the train split draws `[train_seed_start, train_seed_start+train_count)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub size: usize,
    pub factor: usize,
    pub channels: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub train_seed_start: u64,
    pub test_seed_start: u64,
}

impl DatasetConfig {
    /// Desk-scale default: 32-pixel tiles, 2× binning, 4 channels,
    /// 2000 train and 200 test tiles with disjoint seed ranges.
    pub fn desk() -> Self {
        DatasetConfig {
            size: 32,
            factor: 2,
            channels: 4,
            train_count: 2000,
            test_count: 200,
            train_seed_start: 0,
            test_seed_start: 2000,
        }
    }

    fn train_seeds(&self) -> std::ops::Range<u64> {
        self.train_seed_start..self.train_seed_start + self.train_count as u64
    }

    fn test_seeds(&self) -> std::ops::Range<u64> {
        self.test_seed_start..self.test_seed_start + self.test_count as u64
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_count == 0 || self.test_count == 0 {
            return Err(Error::InvalidConfig("both splits need at least one sample".into()));
        }
        let (a, b) = (self.train_seeds(), self.test_seeds());
        if a.start < b.end && b.start < a.end {
            return Err(Error::InvalidConfig(format!(
                "train seeds {a:?} overlap test seeds {b:?}"
            )));
        }
        Ok(())
    }
}

/// On-disk dataset description stored as `manifest.json` next to the tensor
/// files. Normalization statistics are computed from the train split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config: DatasetConfig,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub input_stats: NormalizationStats,
    pub target_stats: NormalizationStats,
}

/// Dataset split selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

fn sample_id(seed: u64) -> String {
    format!("{seed:06}")
}

/// Relative paths of the two tensor files backing one sample id.
pub fn sample_files(split: Split, id: &str) -> (PathBuf, PathBuf) {
    let dir = Path::new(split.dir_name());
    (dir.join(format!("{id}_input.btns")), dir.join(format!("{id}_target.btns")))
}

/// Generates every sample, writes the tensor files and `manifest.json`
/// under `root`, and returns the manifest. Generation runs in parallel
/// across seeds; writes and statistics accumulate in seed order.
pub fn build_dataset(root: &Path, config: &DatasetConfig) -> Result<DatasetManifest> {
    config.validate()?;
    let splits = [(Split::Train, config.train_seeds()), (Split::Test, config.test_seeds())];
    let mut ids = Vec::new();
    let mut input_acc = StatsAccumulator::new(config.channels);
    let mut target_acc = StatsAccumulator::new(3);
    for (split, seeds) in splits {
        fs::create_dir_all(root.join(split.dir_name()))?;
        let pairs: Vec<PairedSample> = seeds
            .clone()
            .into_par_iter()
            .map(|seed| generate_pair(seed, config.size, config.factor, config.channels))
            .collect::<Result<_>>()?;
        let mut split_ids = Vec::with_capacity(pairs.len());
        for pair in &pairs {
            let id = sample_id(pair.seed);
            let (input_rel, target_rel) = sample_files(split, &id);
            pair.input.write_btns(&root.join(input_rel))?;
            pair.target.write_btns(&root.join(target_rel))?;
            if split == Split::Train {
                input_acc.add_image(&pair.input);
                target_acc.add_image(&pair.target);
            }
            split_ids.push(id);
        }
        ids.push(split_ids);
    }
    let test_ids = ids.pop().expect("two splits");
    let train_ids = ids.pop().expect("two splits");
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        train_ids,
        test_ids,
        input_stats: input_acc.finish(StatsScope::Dataset),
        target_stats: target_acc.finish(StatsScope::Dataset),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest is serializable");
    fs::write(root.join("manifest.json"), json + "\n")?;
    Ok(manifest)
}

/// Reads and schema-checks `manifest.json` under `root`.
pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join("manifest.json");
    let bytes = fs::read(&path)?;
    let manifest: DatasetManifest = serde_json::from_slice(&bytes).map_err(|e| {
        Error::Malformed { path: path.display().to_string(), reason: e.to_string() }
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Malformed {
            path: path.display().to_string(),
            reason: format!(
                "manifest version {} unsupported (expected {FORMAT_VERSION})",
                manifest.format_version
            ),
        });
    }
    manifest.config.validate()?;
    Ok(manifest)
}

/// Checks that every file named by the manifest exists; returns the relative
/// paths that are missing, in manifest order.
pub fn missing_files(root: &Path, manifest: &DatasetManifest) -> Vec<PathBuf> {
    let mut missing = Vec::new();
    for (split, ids) in
        [(Split::Train, &manifest.train_ids), (Split::Test, &manifest.test_ids)]
    {
        for id in ids {
            let (input_rel, target_rel) = sample_files(split, id);
            for rel in [input_rel, target_rel] {
                if !root.join(&rel).is_file() {
                    missing.push(rel);
                }
            }
        }
    }
    missing
}

/// Loads one split's tensors in manifest order as `(inputs, targets)`.
pub fn load_split(
    root: &Path,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<(Vec<ImageTensor>, Vec<ImageTensor>)> {
    let ids = match split {
        Split::Train => &manifest.train_ids,
        Split::Test => &manifest.test_ids,
    };
    let mut inputs = Vec::with_capacity(ids.len());
    let mut targets = Vec::with_capacity(ids.len());
    for id in ids {
        let (input_rel, target_rel) = sample_files(split, id);
        inputs.push(ImageTensor::read_btns(&root.join(input_rel))?);
        targets.push(ImageTensor::read_btns(&root.join(target_rel))?);
    }
    Ok((inputs, targets))
}
