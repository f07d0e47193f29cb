//! Pixel-wise coefficient of variation across repeated runs.

use crate::error::{Error, Result};
use crate::imageops;
use crate::tensor::{ImageTensor, Semantics};

/// Division guard: pixels whose mean falls below this get CV = 0.
pub const CV_MEAN_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct CvReport {
    /// Per-pixel, per-channel CV in YCbCr space.
    pub map: ImageTensor,
    /// CV averaged over pixels, one entry per YCbCr channel.
    pub mean_per_channel: [f64; 3],
    /// CV averaged over all channels and pixels.
    pub mean_cv: f64,
    /// Pixels zeroed by the mean floor guard.
    pub guarded: usize,
}

/// Converts each run to YCbCr and reports std/mean per pixel per channel,
/// with the sample (n−1) standard deviation over runs.
pub fn cv_map(runs: &[ImageTensor]) -> Result<CvReport> {
    if runs.len() < 2 {
        return Err(Error::InvalidInput("cv needs at least two runs".into()));
    }
    if runs.iter().any(|r| !r.same_shape(&runs[0])) {
        return Err(Error::InvalidInput("cv runs must share one shape".into()));
    }
    let n = runs.len() as f64;
    let len = runs[0].data().len();
    // Moments are accumulated on deviations from the first run so that
    // bit-identical runs yield an exact zero variance.
    let mut first = Vec::new();
    let (mut s1, mut s2) = (vec![0.0; len], vec![0.0; len]);
    for (r, run) in runs.iter().enumerate() {
        let ycc = imageops::to_ycbcr(run)?;
        if r == 0 {
            first = ycc.into_data();
            continue;
        }
        for (i, v) in ycc.data().iter().enumerate() {
            let d = v - first[i];
            s1[i] += d;
            s2[i] += d * d;
        }
    }
    let mut cv = vec![0.0; len];
    let mut guarded = 0usize;
    let mut channel_sum = [0.0f64; 3];
    let mut max_cv = 0.0f64;
    for i in 0..len {
        let mean = first[i] + s1[i] / n;
        if mean < CV_MEAN_FLOOR {
            guarded += 1;
            continue;
        }
        let var = (s2[i] - s1[i] * s1[i] / n) / (n - 1.0);
        let v = var.max(0.0).sqrt() / mean;
        cv[i] = v;
        channel_sum[i % 3] += v;
        max_cv = max_cv.max(v);
    }
    let pixels = (len / 3) as f64;
    let mean_per_channel = [
        channel_sum[0] / pixels,
        channel_sum[1] / pixels,
        channel_sum[2] / pixels,
    ];
    let mean_cv = (channel_sum[0] + channel_sum[1] + channel_sum[2]) / len as f64;
    let map = ImageTensor::new(
        runs[0].height(),
        runs[0].width(),
        3,
        Semantics::YCbCr,
        (0.0, max_cv.max(1e-12)),
        cv,
    )?;
    Ok(CvReport { map, mean_per_channel, mean_cv, guarded })
}
