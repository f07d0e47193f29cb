//! Multi-scale feature-space distance.
//!
//! The distance sums, over extractor layers, the per-position squared
//! feature differences averaged over positions:
//! d = Σ_l (1 / (H_l·W_l)) Σ_{h,w} ‖n^l_{hw} − n0^l_{hw}‖².
//! The layer weights are implicitly 1; what "perceptual" means is entirely
//! the extractor's business. Absolute values are only comparable under the
//! same extractor.

use crate::error::{Error, Result};
use crate::nn::layers::Conv;
use crate::nn::Feat;
use crate::rng::Stream;
use crate::tensor::ImageTensor;

pub trait FeatureExtractor {
    /// Layer feature maps for one image, fixed dims per input shape.
    fn features(&mut self, img: &ImageTensor) -> Result<Vec<Feat>>;
}

/// Uses the raw image as the single feature layer. The distance then
/// degenerates to the channel-summed squared difference averaged over pixels.
#[derive(Debug, Clone, Copy)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn features(&mut self, img: &ImageTensor) -> Result<Vec<Feat>> {
        Ok(vec![Feat::from_image(img)])
    }
}

/// Three random-convolution stages (widths 16/32/64, SiLU, 2× pooling
/// between stages) with channel-unit-normalized activations. Deterministic
/// in the seed, so scores are reproducible without any learned weights.
#[derive(Clone)]
pub struct RandomConvExtractor {
    convs: Vec<Conv>,
}

const STAGE_WIDTHS: [usize; 3] = [16, 32, 64];

/// Seed of the shared default extractor, so that scores from different
/// commands and runs are mutually comparable.
pub const DEFAULT_EXTRACTOR_SEED: u64 = 0xFEA7;

impl RandomConvExtractor {
    /// The fixed-seed extractor used by default throughout evaluation.
    pub fn standard(in_channels: usize) -> Self {
        Self::new(DEFAULT_EXTRACTOR_SEED, in_channels)
    }

    pub fn new(seed: u64, in_channels: usize) -> Self {
        let mut stream = Stream::new(seed, &[0x7E47]);
        let mut convs = Vec::new();
        let mut cin = in_channels;
        for cout in STAGE_WIDTHS {
            convs.push(Conv::new(&mut stream, cin, cout, 3));
            cin = cout;
        }
        RandomConvExtractor { convs }
    }

    fn in_channels(&self) -> usize {
        self.convs[0].cin
    }
}

fn silu_in_place(f: &mut Feat) {
    for v in f.data.iter_mut() {
        *v *= 1.0 / (1.0 + (-*v).exp());
    }
}

fn pool2(f: &Feat) -> Feat {
    let (oh, ow) = (f.h / 2, f.w / 2);
    let mut out = Feat::zeros(f.c, oh, ow);
    for c in 0..f.c {
        let src = f.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..oh {
            for x in 0..ow {
                let base = 2 * y * f.w + 2 * x;
                dst[y * ow + x] =
                    0.25 * (src[base] + src[base + 1] + src[base + f.w] + src[base + f.w + 1]);
            }
        }
    }
    out
}

/// Scales each spatial position's channel vector to unit length.
fn unit_normalize(f: &mut Feat) {
    let hw = f.hw();
    for p in 0..hw {
        let mut sq = 0.0;
        for c in 0..f.c {
            let v = f.data[c * hw + p];
            sq += v * v;
        }
        let inv = 1.0 / sq.sqrt().max(1e-12);
        for c in 0..f.c {
            f.data[c * hw + p] *= inv;
        }
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn features(&mut self, img: &ImageTensor) -> Result<Vec<Feat>> {
        if img.channels() != self.in_channels() {
            return Err(Error::InvalidConfig(format!(
                "extractor expects {} channels, image has {}",
                self.in_channels(),
                img.channels()
            )));
        }
        if img.height() % 4 != 0 || img.width() % 4 != 0 || img.height() < 8 || img.width() < 8 {
            return Err(Error::InvalidInput(
                "extractor needs dimensions divisible by 4 and at least 8".into(),
            ));
        }
        let mut h = Feat::from_image(img);
        let mut layers = Vec::with_capacity(self.convs.len());
        for (i, conv) in self.convs.iter_mut().enumerate() {
            if i > 0 {
                h = pool2(&h);
            }
            let mut f = conv.forward(&h);
            silu_in_place(&mut f);
            h = f.clone();
            unit_normalize(&mut f);
            layers.push(f);
        }
        Ok(layers)
    }
}

/// Feature-space distance between two same-shaped images.
pub fn perceptual_distance<E: FeatureExtractor>(
    m: &ImageTensor,
    m0: &ImageTensor,
    extractor: &mut E,
) -> Result<f64> {
    if !m.same_shape(m0) {
        return Err(Error::InvalidInput("perceptual distance needs equal shapes".into()));
    }
    let fa = extractor.features(m)?;
    let fb = extractor.features(m0)?;
    if fa.len() != fb.len() {
        return Err(Error::InvalidConfig("extractor layer counts differ between calls".into()));
    }
    let mut total = 0.0;
    for (la, lb) in fa.iter().zip(&fb) {
        if (la.c, la.h, la.w) != (lb.c, lb.h, lb.w) {
            return Err(Error::InvalidConfig("extractor layer dims differ between calls".into()));
        }
        let mut acc = 0.0;
        for (x, y) in la.data.iter().zip(&lb.data) {
            let d = x - y;
            acc += d * d;
        }
        total += acc / (la.h * la.w) as f64;
    }
    Ok(total)
}
