//! Image-quality metrics, stability analysis, and significance testing.
//!
//! Everything here is a pure function of its inputs; batch evaluation
//! parallelizes across image pairs with per-thread extractor clones.

pub mod cv;
pub mod perceptual;
pub mod spectrum;
pub mod ssim;
pub mod ttest;

pub use cv::{cv_map, CvReport};
pub use perceptual::{
    perceptual_distance, FeatureExtractor, IdentityExtractor, RandomConvExtractor,
    DEFAULT_EXTRACTOR_SEED,
};
pub use spectrum::{radial_power_spectrum, SpectrumProfile};
pub use ssim::{ssim, SsimParams, SsimWindow};
pub use ttest::{paired_ttest, TTestResult};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;
use rayon::prelude::*;

/// Mean squared error over all samples and the corresponding peak
/// signal-to-noise ratio in dB, with `a` as the reference: the peak is the
/// maximum value observed in `a`, not its declared range. Identical images
/// yield infinite PSNR rather than an error.
pub fn mse_psnr(a: &ImageTensor, b: &ImageTensor) -> Result<(f64, f64)> {
    if !a.same_shape(b) {
        return Err(Error::InvalidInput("mse over differently shaped images".into()));
    }
    let n = a.data().len() as f64;
    let mut acc = 0.0;
    let mut peak = f64::NEG_INFINITY;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x - y;
        acc += d * d;
        peak = peak.max(x);
    }
    let mse = acc / n;
    let psnr = if mse == 0.0 { f64::INFINITY } else { 10.0 * (peak * peak / mse).log10() };
    Ok((mse, psnr))
}

/// All per-pair scores the evaluation pipeline reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairMetrics {
    pub ssim: f64,
    pub psnr_db: f64,
    pub mse: f64,
    pub perceptual: f64,
}

/// Scores one (output, ground-truth) pair. The truth image is the PSNR
/// reference.
pub fn evaluate_pair<E: FeatureExtractor>(
    output: &ImageTensor,
    truth: &ImageTensor,
    params: &SsimParams,
    extractor: &mut E,
) -> Result<PairMetrics> {
    let ssim = ssim::ssim(truth, output, params)?;
    let (mse, psnr_db) = mse_psnr(truth, output)?;
    let perceptual = perceptual::perceptual_distance(output, truth, extractor)?;
    Ok(PairMetrics { ssim, psnr_db, mse, perceptual })
}

/// Scores many pairs in parallel.
pub fn evaluate_pairs<E>(
    pairs: &[(ImageTensor, ImageTensor)],
    params: &SsimParams,
    extractor: &E,
) -> Result<Vec<PairMetrics>>
where
    E: FeatureExtractor + Clone + Send + Sync,
{
    pairs
        .par_iter()
        .map(|(output, truth)| evaluate_pair(output, truth, params, &mut extractor.clone()))
        .collect()
}

/// Sample mean and its standard error (n−1 variance). A single value has
/// zero standard error.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
