//! Structural similarity.
//!
//! The default mode slides an 11×11 Gaussian window (σ = 1.5) over every
//! position where it fits entirely inside the image; the global mode
//! evaluates the same statistic once over the whole image with uniform
//! weights. Multi-channel images are scored per channel and averaged.

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SsimWindow {
    /// Sliding 11×11 Gaussian window, valid positions only.
    #[default]
    Gaussian11,
    /// One uniform window spanning the whole image.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    pub window: SsimWindow,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams { k1: SSIM_K1, k2: SSIM_K2, window: SsimWindow::Gaussian11 }
    }
}

fn gaussian_window() -> Vec<f64> {
    let mut w = vec![0.0; WINDOW * WINDOW];
    let c = (WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..WINDOW {
        for x in 0..WINDOW {
            let (dy, dx) = (y as f64 - c, x as f64 - c);
            let v = (-(dy * dy + dx * dx) / (2.0 * SIGMA * SIGMA)).exp();
            w[y * WINDOW + x] = v;
            sum += v;
        }
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// The similarity statistic from weighted first and second moments.
fn ssim_term(mu_a: f64, mu_b: f64, va: f64, vb: f64, cov: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
        / ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2))
}

/// Mean structural similarity of two images sharing shape and declared
/// range. Symmetric in its arguments.
pub fn ssim(a: &ImageTensor, b: &ImageTensor, params: &SsimParams) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::InvalidInput("ssim over differently shaped images".into()));
    }
    if a.range() != b.range() {
        return Err(Error::InvalidInput("ssim needs a shared declared range".into()));
    }
    let (lo, hi) = a.range();
    let l = hi - lo;
    let c1 = (params.k1 * l) * (params.k1 * l);
    let c2 = (params.k2 * l) * (params.k2 * l);
    let (h, w, ch) = (a.height(), a.width(), a.channels());
    match params.window {
        SsimWindow::Global => {
            let n = (h * w) as f64;
            let mut total = 0.0;
            for c in 0..ch {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let (va, vb) = (a.at(y, x, c), b.at(y, x, c));
                        sa += va;
                        sb += vb;
                        saa += va * va;
                        sbb += vb * vb;
                        sab += va * vb;
                    }
                }
                let (mu_a, mu_b) = (sa / n, sb / n);
                total += ssim_term(
                    mu_a,
                    mu_b,
                    saa / n - mu_a * mu_a,
                    sbb / n - mu_b * mu_b,
                    sab / n - mu_a * mu_b,
                    c1,
                    c2,
                );
            }
            Ok(total / ch as f64)
        }
        SsimWindow::Gaussian11 => {
            if h < WINDOW || w < WINDOW {
                return Err(Error::InvalidInput(format!(
                    "{h}x{w} image cannot hold an {WINDOW}x{WINDOW} ssim window"
                )));
            }
            let kernel = gaussian_window();
            let mut total = 0.0;
            let mut windows = 0usize;
            for c in 0..ch {
                for oy in 0..=h - WINDOW {
                    for ox in 0..=w - WINDOW {
                        let (mut sa, mut sb, mut saa, mut sbb, mut sab) =
                            (0.0, 0.0, 0.0, 0.0, 0.0);
                        for ky in 0..WINDOW {
                            for kx in 0..WINDOW {
                                let k = kernel[ky * WINDOW + kx];
                                let va = a.at(oy + ky, ox + kx, c);
                                let vb = b.at(oy + ky, ox + kx, c);
                                sa += k * va;
                                sb += k * vb;
                                saa += k * va * va;
                                sbb += k * vb * vb;
                                sab += k * va * vb;
                            }
                        }
                        total += ssim_term(
                            sa,
                            sb,
                            saa - sa * sa,
                            sbb - sb * sb,
                            sab - sa * sb,
                            c1,
                            c2,
                        );
                        windows += 1;
                    }
                }
            }
            Ok(total / windows as f64)
        }
    }
}
