//! Pixel-domain operations: color conversion, resampling, patching,
//! augmentation, and normalization.
//!
//! All functions are pure; outputs depend only on inputs (and on the supplied
//! stream position where randomness is involved).

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::{ImageTensor, Semantics};

/// Floor applied to per-channel standard deviations so constant channels
/// normalize to zeros instead of blowing up.
pub const STD_FLOOR: f64 = 1e-6;

// Full-range BT.601 luma weights.
pub(crate) const KR: f64 = 0.299;
pub(crate) const KG: f64 = 0.587;
pub(crate) const KB: f64 = 0.114;

/// RGB → YCbCr, full-range BT.601 with 0.5 chroma offset.
///
/// For inputs in [0,1]: Y stays in [0,1] and both chroma channels stay in
/// [0,1] centered on 0.5. Gray pixels map to (v, 0.5, 0.5).
pub fn to_ycbcr(img: &ImageTensor) -> Result<ImageTensor> {
    if img.semantics() != Semantics::Rgb || img.channels() != 3 {
        return Err(Error::InvalidInput(format!(
            "to_ycbcr expects a 3-channel rgb tensor, got {:?} with {} channels",
            img.semantics(),
            img.channels()
        )));
    }
    let mut data = Vec::with_capacity(img.data().len());
    for px in img.data().chunks_exact(3) {
        let (r, g, b) = (px[0], px[1], px[2]);
        let y = KR * r + KG * g + KB * b;
        let cb = 0.5 + 0.5 * (b - y) / (1.0 - KB);
        let cr = 0.5 + 0.5 * (r - y) / (1.0 - KR);
        data.extend_from_slice(&[y, cb, cr]);
    }
    ImageTensor::new(img.height(), img.width(), 3, Semantics::YCbCr, (0.0, 1.0), data)
}

/// YCbCr → RGB, inverse of [`to_ycbcr`] to within 1e-6.
pub fn from_ycbcr(img: &ImageTensor) -> Result<ImageTensor> {
    if img.semantics() != Semantics::YCbCr || img.channels() != 3 {
        return Err(Error::InvalidInput(format!(
            "from_ycbcr expects a 3-channel ycbcr tensor, got {:?} with {} channels",
            img.semantics(),
            img.channels()
        )));
    }
    let mut data = Vec::with_capacity(img.data().len());
    for px in img.data().chunks_exact(3) {
        let (y, cb, cr) = (px[0], px[1], px[2]);
        let r = y + 2.0 * (1.0 - KR) * (cr - 0.5);
        let b = y + 2.0 * (1.0 - KB) * (cb - 0.5);
        let g = (y - KR * r - KB * b) / KG;
        data.extend_from_slice(&[r, g, b]);
    }
    ImageTensor::new(img.height(), img.width(), 3, Semantics::Rgb, (0.0, 1.0), data)
}

/// N×N block-mean downsampling.
pub fn bin_pixels(img: &ImageTensor, factor: usize) -> Result<ImageTensor> {
    if factor == 0 {
        return Err(Error::InvalidInput("binning factor must be at least 1".into()));
    }
    if img.height() % factor != 0 || img.width() % factor != 0 {
        return Err(Error::InvalidInput(format!(
            "dimensions {}x{} not divisible by binning factor {factor}",
            img.height(),
            img.width()
        )));
    }
    let (oh, ow, c) = (img.height() / factor, img.width() / factor, img.channels());
    let inv = 1.0 / (factor * factor) as f64;
    let mut data = vec![0.0; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut acc = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += img.at(oy * factor + dy, ox * factor + dx, ch);
                    }
                }
                data[(oy * ow + ox) * c + ch] = acc * inv;
            }
        }
    }
    ImageTensor::new(oh, ow, c, img.semantics(), img.range(), data)
}

/// Sub-pixel rearrangement: `out[i·N+a, j·N+b, c] = in[i, j, c·N² + a·N + b]`.
pub fn pixel_shuffle(img: &ImageTensor, factor: usize) -> Result<ImageTensor> {
    if factor == 0 {
        return Err(Error::InvalidInput("shuffle factor must be at least 1".into()));
    }
    let n2 = factor * factor;
    if img.channels() % n2 != 0 {
        return Err(Error::InvalidInput(format!(
            "{} channels not divisible by N² = {n2}",
            img.channels()
        )));
    }
    let (h, w) = (img.height(), img.width());
    let oc = img.channels() / n2;
    let (oh, ow) = (h * factor, w * factor);
    let mut data = vec![0.0; oh * ow * oc];
    for i in 0..h {
        for j in 0..w {
            for c in 0..oc {
                for a in 0..factor {
                    for b in 0..factor {
                        let v = img.at(i, j, c * n2 + a * factor + b);
                        data[((i * factor + a) * ow + j * factor + b) * oc + c] = v;
                    }
                }
            }
        }
    }
    ImageTensor::new(oh, ow, oc, img.semantics(), img.range(), data)
}

/// Exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(img: &ImageTensor, factor: usize) -> Result<ImageTensor> {
    if factor == 0 {
        return Err(Error::InvalidInput("shuffle factor must be at least 1".into()));
    }
    if img.height() % factor != 0 || img.width() % factor != 0 {
        return Err(Error::InvalidInput(format!(
            "dimensions {}x{} not divisible by unshuffle factor {factor}",
            img.height(),
            img.width()
        )));
    }
    let n2 = factor * factor;
    let (oh, ow) = (img.height() / factor, img.width() / factor);
    let oc = img.channels() * n2;
    let mut data = vec![0.0; oh * ow * oc];
    for i in 0..oh {
        for j in 0..ow {
            for c in 0..img.channels() {
                for a in 0..factor {
                    for b in 0..factor {
                        let v = img.at(i * factor + a, j * factor + b, c);
                        data[(i * ow + j) * oc + c * n2 + a * factor + b] = v;
                    }
                }
            }
        }
    }
    ImageTensor::new(oh, ow, oc, img.semantics(), img.range(), data)
}

/// All fully-contained size×size windows at the given stride, in raster order.
pub fn extract_patches(
    img: &ImageTensor,
    size: usize,
    stride: usize,
) -> Result<Vec<ImageTensor>> {
    if size == 0 || stride == 0 {
        return Err(Error::InvalidInput("patch size and stride must be at least 1".into()));
    }
    if size > img.height() || size > img.width() {
        return Err(Error::EmptyResult(format!(
            "patch size {size} exceeds image {}x{}",
            img.height(),
            img.width()
        )));
    }
    let c = img.channels();
    let mut patches = Vec::new();
    let mut y0 = 0;
    while y0 + size <= img.height() {
        let mut x0 = 0;
        while x0 + size <= img.width() {
            let mut data = Vec::with_capacity(size * size * c);
            for y in 0..size {
                let row = img.idx(y0 + y, x0, 0);
                data.extend_from_slice(&img.data()[row..row + size * c]);
            }
            patches.push(ImageTensor::new(
                size,
                size,
                c,
                img.semantics(),
                img.range(),
                data,
            )?);
            x0 += stride;
        }
        y0 += stride;
    }
    Ok(patches)
}

/// One of the 8 dihedral transforms: id = r + 4·f applies a horizontal flip
/// (if f = 1) followed by r counter-clockwise quarter turns.
pub type TransformId = u8;

pub const TRANSFORM_COUNT: u8 = 8;

/// The transform id that undoes `id`. Flipped variants are reflections and
/// therefore self-inverse.
pub fn inverse_transform(id: TransformId) -> TransformId {
    if id < 4 {
        (4 - id) % 4
    } else {
        id
    }
}

fn rot90_ccw(img: &ImageTensor) -> ImageTensor {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut data = vec![0.0; h * w * c];
    // out is w×h; out(y, x) = in(x, w-1-y)
    for y in 0..w {
        for x in 0..h {
            for ch in 0..c {
                data[(y * h + x) * c + ch] = img.at(x, w - 1 - y, ch);
            }
        }
    }
    ImageTensor::new(w, h, c, img.semantics(), img.range(), data).unwrap()
}

fn flip_horizontal(img: &ImageTensor) -> ImageTensor {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut data = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data[(y * w + x) * c + ch] = img.at(y, w - 1 - x, ch);
            }
        }
    }
    ImageTensor::new(h, w, c, img.semantics(), img.range(), data).unwrap()
}

/// Applies dihedral transform `id`.
///
/// Odd quarter-turn counts swap the axes, so they are only defined for square
/// images.
pub fn apply_transform(img: &ImageTensor, id: TransformId) -> Result<ImageTensor> {
    if id >= TRANSFORM_COUNT {
        return Err(Error::InvalidInput(format!("transform id {id} out of range 0..8")));
    }
    let rots = (id % 4) as usize;
    if rots % 2 == 1 && img.height() != img.width() {
        return Err(Error::InvalidInput(format!(
            "90-degree rotation requested for non-square {}x{} image",
            img.height(),
            img.width()
        )));
    }
    let mut out = if id >= 4 { flip_horizontal(img) } else { img.clone() };
    for _ in 0..rots {
        out = rot90_ccw(&out);
    }
    Ok(out)
}

/// Draws one of the 8 dihedral transforms uniformly and applies it.
///
/// Returns the transform id so the same transform can be applied to the
/// paired image.
pub fn augment(patch: &ImageTensor, stream: &mut Stream) -> Result<(ImageTensor, TransformId)> {
    if patch.height() != patch.width() {
        return Err(Error::InvalidInput(format!(
            "augment expects a square patch, got {}x{}",
            patch.height(),
            patch.width()
        )));
    }
    let id = stream.next_index(TRANSFORM_COUNT as usize) as TransformId;
    Ok((apply_transform(patch, id)?, id))
}

/// Scope tag for [`NormalizationStats`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatsScope {
    PerImage,
    Dataset,
}

/// Per-channel first and second moments used for zero-mean unit-variance
/// normalization. Standard deviations are floored at [`STD_FLOOR`] so
/// degenerate channels stay harmless.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub scope: StatsScope,
}

impl NormalizationStats {
    pub fn new(mean: Vec<f64>, std: Vec<f64>, scope: StatsScope) -> Result<Self> {
        if mean.len() != std.len() || mean.is_empty() {
            return Err(Error::InvalidInput(format!(
                "stats length mismatch: {} means, {} stds",
                mean.len(),
                std.len()
            )));
        }
        if mean.iter().chain(std.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("stats contain non-finite values".into()));
        }
        let std = std.into_iter().map(|s| s.max(STD_FLOOR)).collect();
        Ok(NormalizationStats { mean, std, scope })
    }

    /// Moments of a single image (population variance).
    pub fn per_image(img: &ImageTensor) -> Self {
        let mut acc = StatsAccumulator::new(img.channels());
        acc.add_image(img);
        acc.finish(StatsScope::PerImage)
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Streaming accumulator for dataset-level statistics. Add images in a fixed
/// order for byte-reproducible results.
#[derive(Debug, Clone)]
pub struct StatsAccumulator {
    count: f64,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
}

impl StatsAccumulator {
    pub fn new(channels: usize) -> Self {
        StatsAccumulator { count: 0.0, sum: vec![0.0; channels], sumsq: vec![0.0; channels] }
    }

    pub fn add_image(&mut self, img: &ImageTensor) {
        assert_eq!(img.channels(), self.sum.len(), "channel count changed mid-accumulation");
        for px in img.data().chunks_exact(img.channels()) {
            for (c, &v) in px.iter().enumerate() {
                self.sum[c] += v;
                self.sumsq[c] += v * v;
            }
        }
        self.count += (img.height() * img.width()) as f64;
    }

    pub fn finish(&self, scope: StatsScope) -> NormalizationStats {
        assert!(self.count > 0.0, "no samples accumulated");
        let mean: Vec<f64> = self.sum.iter().map(|s| s / self.count).collect();
        let std = self
            .sumsq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| (sq / self.count - m * m).max(0.0).sqrt())
            .collect();
        NormalizationStats::new(mean, std, scope).expect("accumulated stats are finite")
    }
}

fn check_stats(img: &ImageTensor, stats: &NormalizationStats) -> Result<()> {
    if stats.channels() != img.channels() {
        return Err(Error::InvalidInput(format!(
            "stats cover {} channels, image has {}",
            stats.channels(),
            img.channels()
        )));
    }
    Ok(())
}

/// Per-channel `(x − mean)/std`. The result is tagged as model-space data.
pub fn normalize(img: &ImageTensor, stats: &NormalizationStats) -> Result<ImageTensor> {
    check_stats(img, stats)?;
    let c = img.channels();
    let mut data = Vec::with_capacity(img.data().len());
    for px in img.data().chunks_exact(c) {
        for (ch, &v) in px.iter().enumerate() {
            data.push((v - stats.mean[ch]) / stats.std[ch]);
        }
    }
    let (lo, hi) = img.range();
    let nlo = stats
        .mean
        .iter()
        .zip(&stats.std)
        .map(|(m, s)| (lo - m) / s)
        .fold(f64::INFINITY, f64::min);
    let nhi = stats
        .mean
        .iter()
        .zip(&stats.std)
        .map(|(m, s)| (hi - m) / s)
        .fold(f64::NEG_INFINITY, f64::max);
    ImageTensor::new(
        img.height(),
        img.width(),
        c,
        Semantics::NormalizedLatent,
        (nlo.min(nhi), nhi.max(nlo)),
        data,
    )
}

/// Exact inverse of [`normalize`]; the caller restores the original tags.
pub fn denormalize(
    img: &ImageTensor,
    stats: &NormalizationStats,
    semantics: Semantics,
    range: (f64, f64),
) -> Result<ImageTensor> {
    check_stats(img, stats)?;
    let c = img.channels();
    let mut data = Vec::with_capacity(img.data().len());
    for px in img.data().chunks_exact(c) {
        for (ch, &v) in px.iter().enumerate() {
            data.push(v * stats.std[ch] + stats.mean[ch]);
        }
    }
    ImageTensor::new(img.height(), img.width(), c, semantics, range, data)
}

/// Nearest-neighbor (block-replicating) upsampling by an integer factor.
pub fn nearest_upsample(img: &ImageTensor, factor: usize) -> Result<ImageTensor> {
    if factor == 0 {
        return Err(Error::InvalidInput("upsampling factor must be at least 1".into()));
    }
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let (oh, ow) = (h * factor, w * factor);
    let mut data = vec![0.0; oh * ow * c];
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                data[(y * ow + x) * c + ch] = img.at(y / factor, x / factor, ch);
            }
        }
    }
    ImageTensor::new(oh, ow, c, img.semantics(), img.range(), data)
}

/// Bilinear upsampling by an integer factor, pixel-center aligned with edge
/// clamping.
pub fn bilinear_upsample(img: &ImageTensor, factor: usize) -> Result<ImageTensor> {
    if factor == 0 {
        return Err(Error::InvalidInput("upsampling factor must be at least 1".into()));
    }
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let (oh, ow) = (h * factor, w * factor);
    let s = factor as f64;
    let mut data = vec![0.0; oh * ow * c];
    for y in 0..oh {
        let sy = ((y as f64 + 0.5) / s - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for x in 0..ow {
            let sx = ((x as f64 + 0.5) / s - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            for ch in 0..c {
                let v00 = img.at(y0, x0, ch);
                let v01 = img.at(y0, x1, ch);
                let v10 = img.at(y1, x0, ch);
                let v11 = img.at(y1, x1, ch);
                let top = v00 + (v01 - v00) * fx;
                let bot = v10 + (v11 - v10) * fx;
                data[(y * ow + x) * c + ch] = top + (bot - top) * fy;
            }
        }
    }
    ImageTensor::new(oh, ow, c, img.semantics(), img.range(), data)
}
