//! Learned conditioning head.
//!
//! Maps a low-resolution multi-channel input stack to a full-resolution
//! 3-channel conditioning image via two convolutions and sub-pixel
//! upsampling. The output lives in the same normalized space as the target
//! images and is both the bridge endpoint and the denoiser's conditioning
//! input, so gradients reach this head through every use.

use crate::error::{Error, Result};
use crate::nn::feat::Feat;
use crate::nn::layers::{Conv, ParamVisitor, Silu};
use crate::rng::Stream;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionerConfig {
    /// Channel count of the low-resolution input stack.
    pub in_channels: usize,
    pub hidden: usize,
    /// Channels of the conditioning image (matches the target space).
    pub out_channels: usize,
    /// Spatial upsampling factor (the pixel binning factor of the inputs).
    pub upsample: usize,
}

impl ConditionerConfig {
    pub fn desk(in_channels: usize, upsample: usize) -> Self {
        ConditionerConfig { in_channels, hidden: 16, out_channels: 3, upsample }
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.hidden == 0 || self.out_channels == 0 || self.upsample == 0
        {
            return Err(Error::InvalidConfig("conditioner dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct Conditioner {
    pub config: ConditionerConfig,
    conv1: Conv,
    act: Silu,
    conv2: Conv,
}

impl Conditioner {
    pub fn new(stream: &mut Stream, config: ConditionerConfig) -> Result<Self> {
        config.validate()?;
        let n2 = config.upsample * config.upsample;
        let conv1 = Conv::new(stream, config.in_channels, config.hidden, 3);
        let conv2 = Conv::new(stream, config.hidden, config.out_channels * n2, 3);
        Ok(Conditioner { config, conv1, act: Silu::new(), conv2 })
    }

    pub fn visit(&mut self, f: &mut ParamVisitor) {
        self.conv1.visit("cond.conv1", f);
        self.conv2.visit("cond.conv2", f);
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, p| n += p.len());
        n
    }

    pub fn forward(&mut self, x: &Feat) -> Feat {
        assert_eq!(x.c, self.config.in_channels);
        let h = self.conv2.forward(&self.act.forward(&self.conv1.forward(x)));
        shuffle(&h, self.config.upsample)
    }

    pub fn backward(&mut self, gout: &Feat) -> Feat {
        let g = unshuffle(gout, self.config.upsample);
        self.conv1.backward(&self.act.backward(&self.conv2.backward(&g)))
    }

    pub fn zero_grad(&mut self) {
        self.visit(&mut |_, p| p.zero_grad());
    }
}

/// Planar sub-pixel upsampling: out[c][i·N+a][j·N+b] = in[c·N²+a·N+b][i][j].
fn shuffle(x: &Feat, n: usize) -> Feat {
    let n2 = n * n;
    assert!(x.c % n2 == 0);
    let (oc, oh, ow) = (x.c / n2, x.h * n, x.w * n);
    let mut out = Feat::zeros(oc, oh, ow);
    for c in 0..oc {
        for a in 0..n {
            for b in 0..n {
                let src = x.plane(c * n2 + a * n + b);
                let dst = out.plane_mut(c);
                for i in 0..x.h {
                    for j in 0..x.w {
                        dst[(i * n + a) * ow + j * n + b] = src[i * x.w + j];
                    }
                }
            }
        }
    }
    out
}

/// Exact transpose (and inverse) of [`shuffle`].
fn unshuffle(x: &Feat, n: usize) -> Feat {
    assert!(x.h % n == 0 && x.w % n == 0);
    let n2 = n * n;
    let (oc, oh, ow) = (x.c * n2, x.h / n, x.w / n);
    let mut out = Feat::zeros(oc, oh, ow);
    for c in 0..x.c {
        for a in 0..n {
            for b in 0..n {
                let src = x.plane(c);
                let dst = out.plane_mut(c * n2 + a * n + b);
                for i in 0..oh {
                    for j in 0..ow {
                        dst[i * ow + j] = src[(i * n + a) * x.w + j * n + b];
                    }
                }
            }
        }
    }
    out
}
