//! The denoising U-Net.
//!
//! A standard encoder/decoder with residual blocks, channel-concatenated
//! skip connections, self-attention at coarse resolutions, and a sinusoidal
//! timestep code injected into every residual block as a per-channel input
//! bias. The network is built for one fixed square input size; patch-based
//! pipelines keep all tensors at that size.

use crate::error::{Error, Result};
use crate::nn::embedding::timestep_code;
use crate::nn::feat::Feat;
use crate::nn::layers::{Attention, AvgPool2, Conv, GroupNorm, ParamVisitor, ResBlock, Silu, Upsample2};
use crate::rng::Stream;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Side length of the square inputs the network is built for.
    pub base_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Number of resolution levels; level l runs at base_size / 2^l.
    pub levels: usize,
    /// Channel width at the finest level; width doubles per level.
    pub base_width: usize,
    pub attention_heads: usize,
    /// Attention blocks are placed at levels whose side length is at most
    /// this value (the bottleneck always gets one).
    pub attention_min_size: usize,
    pub time_embed_dim: usize,
}

impl UNetConfig {
    /// Small configuration sized for single-core CPU training on 32×32 tiles.
    pub fn desk(base_size: usize) -> Self {
        UNetConfig {
            base_size,
            in_channels: 6,
            out_channels: 3,
            levels: 3,
            base_width: 8,
            attention_heads: 4,
            attention_min_size: 16,
            time_embed_dim: 64,
        }
    }

    pub fn width_at(&self, level: usize) -> usize {
        self.base_width << level
    }

    pub fn size_at(&self, level: usize) -> usize {
        self.base_size >> level
    }

    fn attention_at(&self, level: usize) -> bool {
        self.size_at(level) <= self.attention_min_size
    }

    fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.base_width == 0 || self.in_channels == 0 || self.out_channels == 0
        {
            return Err(Error::InvalidConfig("network dimensions must be positive".into()));
        }
        if self.base_size % (1 << (self.levels - 1)) != 0 || self.size_at(self.levels - 1) < 2 {
            return Err(Error::InvalidConfig(format!(
                "base size {} does not support {} levels",
                self.base_size, self.levels
            )));
        }
        if self.time_embed_dim < 4 || self.time_embed_dim % 2 != 0 {
            return Err(Error::InvalidConfig("time embedding dim must be even and >= 4".into()));
        }
        for l in 0..self.levels {
            let needs_attn = self.attention_at(l) || l == self.levels - 1;
            if needs_attn && self.width_at(l) % self.attention_heads != 0 {
                return Err(Error::InvalidConfig(format!(
                    "width {} at level {l} not divisible by {} heads",
                    self.width_at(l),
                    self.attention_heads
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone)]
struct DownLevel {
    res: ResBlock,
    attn: Option<Attention>,
}

#[derive(Clone)]
struct UpLevel {
    res: ResBlock,
    attn: Option<Attention>,
}

#[derive(Clone)]
pub struct UNet {
    pub config: UNetConfig,
    stem: Conv,
    down: Vec<DownLevel>,
    mid1: ResBlock,
    mid2: ResBlock,
    mid_attn: Attention,
    up: Vec<UpLevel>,
    head_norm: GroupNorm,
    head_act: Silu,
    head_conv: Conv,
    pool: AvgPool2,
    upsample: Upsample2,
    temb_act: Silu,
    skips: Vec<Feat>,
}

impl UNet {
    pub fn new(stream: &mut Stream, config: UNetConfig) -> Result<Self> {
        config.validate()?;
        let l_max = config.levels - 1;
        let stem = Conv::new(stream, config.in_channels, config.base_width, 3);
        let mut down = Vec::new();
        for l in 0..config.levels {
            let cin = if l == 0 { config.width_at(0) } else { config.width_at(l - 1) };
            let res = ResBlock::new(stream, cin, config.width_at(l), config.time_embed_dim);
            let attn = config
                .attention_at(l)
                .then(|| Attention::new(stream, config.width_at(l), config.attention_heads));
            down.push(DownLevel { res, attn });
        }
        let wb = config.width_at(l_max);
        let mid1 = ResBlock::new(stream, wb, wb, config.time_embed_dim);
        let mid2 = ResBlock::new(stream, wb, wb, config.time_embed_dim);
        let mid_attn = Attention::new(stream, wb, config.attention_heads);
        // Decoder levels are constructed and stored in processing order,
        // deepest first.
        let mut up = Vec::new();
        for l in (0..config.levels).rev() {
            let carried = if l == l_max { config.width_at(l_max) } else { config.width_at(l + 1) };
            let cin = carried + config.width_at(l);
            let res = ResBlock::new(stream, cin, config.width_at(l), config.time_embed_dim);
            let attn = config
                .attention_at(l)
                .then(|| Attention::new(stream, config.width_at(l), config.attention_heads));
            up.push(UpLevel { res, attn });
        }
        let head_norm = GroupNorm::new(config.base_width);
        let head_conv = Conv::new_zeroed(config.base_width, config.out_channels, 3);
        Ok(UNet {
            config,
            stem,
            down,
            mid1,
            mid2,
            mid_attn,
            up,
            head_norm,
            head_act: Silu::new(),
            head_conv,
            pool: AvgPool2,
            upsample: Upsample2,
            temb_act: Silu::new(),
            skips: Vec::new(),
        })
    }

    pub fn visit(&mut self, f: &mut ParamVisitor) {
        self.stem.visit("stem", f);
        for (l, lvl) in self.down.iter_mut().enumerate() {
            lvl.res.visit(&format!("down.{l}.res"), f);
            if let Some(a) = &mut lvl.attn {
                a.visit(&format!("down.{l}.attn"), f);
            }
        }
        self.mid1.visit("mid.res1", f);
        self.mid2.visit("mid.res2", f);
        self.mid_attn.visit("mid.attn", f);
        let levels = self.config.levels;
        for (i, lvl) in self.up.iter_mut().enumerate() {
            let l = levels - 1 - i;
            lvl.res.visit(&format!("up.{l}.res"), f);
            if let Some(a) = &mut lvl.attn {
                a.visit(&format!("up.{l}.attn"), f);
            }
        }
        self.head_norm.visit("head.norm", f);
        self.head_conv.visit("head.conv", f);
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, p| n += p.len());
        n
    }

    pub fn forward(&mut self, x: &Feat, t: f64) -> Feat {
        assert_eq!(x.c, self.config.in_channels);
        assert_eq!((x.h, x.w), (self.config.base_size, self.config.base_size));
        let temb = self.temb_act.forward_slice(&timestep_code(t, self.config.time_embed_dim));
        let mut h = self.stem.forward(x);
        self.skips.clear();
        for l in 0..self.config.levels {
            if l > 0 {
                h = self.pool.forward(&h);
            }
            h = self.down[l].res.forward(&h, &temb);
            if let Some(a) = &mut self.down[l].attn {
                h = a.forward(&h);
            }
            self.skips.push(h.clone());
        }
        h = self.mid1.forward(&h, &temb);
        h = self.mid2.forward(&h, &temb);
        h = self.mid_attn.forward(&h);
        for (i, l) in (0..self.config.levels).rev().enumerate() {
            if l + 1 != self.config.levels {
                h = self.upsample.forward(&h);
            }
            h = Feat::concat(&h, &self.skips[l]).expect("skip resolution mismatch");
            h = self.up[i].res.forward(&h, &temb);
            if let Some(a) = &mut self.up[i].attn {
                h = a.forward(&h);
            }
        }
        self.head_conv.forward(&self.head_act.forward(&self.head_norm.forward(&h)))
    }

    /// Backpropagates a loss gradient through the whole network, accumulating
    /// parameter gradients, and returns the gradient with respect to the
    /// network input.
    pub fn backward(&mut self, gout: &Feat) -> Feat {
        let mut dtemb = vec![0.0; self.config.time_embed_dim];
        let mut g = self.head_norm.backward(&self.head_act.backward(&self.head_conv.backward(gout)));
        let levels = self.config.levels;
        let mut dskips: Vec<Option<Feat>> = vec![None; levels];
        // Decoder, reverse of processing order.
        for (i, l) in (0..levels).rev().enumerate().rev() {
            if let Some(a) = &mut self.up[i].attn {
                g = a.backward(&g);
            }
            g = self.up[i].res.backward(&g, &mut dtemb);
            let carried = g.c - self.config.width_at(l);
            let (gh, gskip) = g.split(carried);
            dskips[l] = Some(gskip);
            g = gh;
            if l + 1 != levels {
                g = self.upsample.backward(&g);
            }
        }
        g = self.mid_attn.backward(&g);
        g = self.mid2.backward(&g, &mut dtemb);
        g = self.mid1.backward(&g, &mut dtemb);
        for l in (0..levels).rev() {
            let dskip = dskips[l].take().expect("decoder visited every level");
            for (gv, &sv) in g.data.iter_mut().zip(&dskip.data) {
                *gv += sv;
            }
            if let Some(a) = &mut self.down[l].attn {
                g = a.backward(&g);
            }
            g = self.down[l].res.backward(&g, &mut dtemb);
            if l > 0 {
                g = self.pool.backward(&g);
            }
        }
        self.stem.backward(&g)
        // dtemb ends here: the code itself has no learnable parameters.
    }

    pub fn zero_grad(&mut self) {
        self.visit(&mut |_, p| p.zero_grad());
    }
}
