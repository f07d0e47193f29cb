//! Network layers with explicit forward/backward passes.
//!
//! Every layer caches whatever its backward pass needs during `forward`, so
//! the call protocol is strictly forward-then-backward per sample. Parameter
//! gradients accumulate across calls until [`Param::zero_grad`]; callers
//! average over the batch by scaling the loss gradient.

use crate::nn::feat::Feat;
use crate::rng::Stream;

/// A learnable tensor and its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub w: Vec<f64>,
    pub g: Vec<f64>,
}

impl Param {
    pub fn randn(stream: &mut Stream, n: usize, scale: f64) -> Self {
        let w = (0..n).map(|_| stream.next_normal() * scale).collect();
        Param { w, g: vec![0.0; n] }
    }

    pub fn zeros(n: usize) -> Self {
        Param { w: vec![0.0; n], g: vec![0.0; n] }
    }

    pub fn ones(n: usize) -> Self {
        Param { w: vec![1.0; n], g: vec![0.0; n] }
    }

    pub fn zero_grad(&mut self) {
        self.g.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Callback used to enumerate all parameters of a model in a stable order.
pub type ParamVisitor<'a> = dyn FnMut(&str, &mut Param) + 'a;

#[inline]
fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// 2-D convolution, kernel 1×1 (no padding) or 3×3 (same padding).
#[derive(Debug, Clone)]
pub struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub weight: Param,
    pub bias: Param,
    pad_in: Vec<f64>,
    in_h: usize,
    in_w: usize,
}

impl Conv {
    pub fn new(stream: &mut Stream, cin: usize, cout: usize, k: usize) -> Self {
        assert!(k == 1 || k == 3, "only 1x1 and 3x3 kernels are used");
        let scale = 1.0 / ((cin * k * k) as f64).sqrt();
        Conv {
            cin,
            cout,
            k,
            weight: Param::randn(stream, cout * cin * k * k, scale),
            bias: Param::zeros(cout),
            pad_in: Vec::new(),
            in_h: 0,
            in_w: 0,
        }
    }

    /// Zero-initialized variant for layers that should start as identity
    /// contributions (residual tails, attention projections, output head).
    pub fn new_zeroed(cin: usize, cout: usize, k: usize) -> Self {
        assert!(k == 1 || k == 3);
        Conv {
            cin,
            cout,
            k,
            weight: Param::zeros(cout * cin * k * k),
            bias: Param::zeros(cout),
            pad_in: Vec::new(),
            in_h: 0,
            in_w: 0,
        }
    }

    pub fn visit(&mut self, prefix: &str, f: &mut ParamVisitor) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }

    pub fn forward(&mut self, x: &Feat) -> Feat {
        assert_eq!(x.c, self.cin);
        let (h, w) = (x.h, x.w);
        self.in_h = h;
        self.in_w = w;
        let mut out = Feat::zeros(self.cout, h, w);
        if self.k == 1 {
            self.pad_in.clear();
            self.pad_in.extend_from_slice(&x.data);
            for oc in 0..self.cout {
                let plane = out.plane_mut(oc);
                plane.iter_mut().for_each(|v| *v = self.bias.w[oc]);
                for ic in 0..self.cin {
                    axpy(plane, self.weight.w[oc * self.cin + ic], x.plane(ic));
                }
            }
            return out;
        }
        // 3x3, same padding: cache a zero-padded copy of the input.
        let (ph, pw) = (h + 2, w + 2);
        self.pad_in.clear();
        self.pad_in.resize(self.cin * ph * pw, 0.0);
        for ic in 0..self.cin {
            let src = x.plane(ic);
            let dst = &mut self.pad_in[ic * ph * pw..(ic + 1) * ph * pw];
            for y in 0..h {
                dst[(y + 1) * pw + 1..(y + 1) * pw + 1 + w].copy_from_slice(&src[y * w..(y + 1) * w]);
            }
        }
        for oc in 0..self.cout {
            let plane = out.plane_mut(oc);
            plane.iter_mut().for_each(|v| *v = self.bias.w[oc]);
            for ic in 0..self.cin {
                let pad = &self.pad_in[ic * ph * pw..(ic + 1) * ph * pw];
                for dy in 0..3 {
                    for dx in 0..3 {
                        let wv = self.weight.w[((oc * self.cin + ic) * 3 + dy) * 3 + dx];
                        if wv == 0.0 {
                            continue;
                        }
                        for y in 0..h {
                            axpy(
                                &mut plane[y * w..(y + 1) * w],
                                wv,
                                &pad[(y + dy) * pw + dx..(y + dy) * pw + dx + w],
                            );
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward(&mut self, gout: &Feat) -> Feat {
        assert_eq!(gout.c, self.cout);
        let (h, w) = (self.in_h, self.in_w);
        let mut gin = Feat::zeros(self.cin, h, w);
        for oc in 0..self.cout {
            self.bias.g[oc] += gout.plane(oc).iter().sum::<f64>();
        }
        if self.k == 1 {
            for oc in 0..self.cout {
                let g = gout.plane(oc);
                for ic in 0..self.cin {
                    let xin = &self.pad_in[ic * h * w..(ic + 1) * h * w];
                    self.weight.g[oc * self.cin + ic] += dot(g, xin);
                    axpy(gin.plane_mut(ic), self.weight.w[oc * self.cin + ic], g);
                }
            }
            return gin;
        }
        let (ph, pw) = (h + 2, w + 2);
        // Weight gradients: correlate output grads with the cached padded input.
        for oc in 0..self.cout {
            let g = gout.plane(oc);
            for ic in 0..self.cin {
                let pad = &self.pad_in[ic * ph * pw..(ic + 1) * ph * pw];
                for dy in 0..3 {
                    for dx in 0..3 {
                        let mut acc = 0.0;
                        for y in 0..h {
                            acc += dot(
                                &g[y * w..(y + 1) * w],
                                &pad[(y + dy) * pw + dx..(y + dy) * pw + dx + w],
                            );
                        }
                        self.weight.g[((oc * self.cin + ic) * 3 + dy) * 3 + dx] += acc;
                    }
                }
            }
        }
        // Input gradients: full correlation with the transposed, flipped kernel.
        let mut gpad = vec![0.0; ph * pw];
        for oc in 0..self.cout {
            gpad.iter_mut().for_each(|v| *v = 0.0);
            let g = gout.plane(oc);
            for y in 0..h {
                gpad[(y + 1) * pw + 1..(y + 1) * pw + 1 + w].copy_from_slice(&g[y * w..(y + 1) * w]);
            }
            for ic in 0..self.cin {
                let plane = gin.plane_mut(ic);
                for dy in 0..3 {
                    for dx in 0..3 {
                        let wv = self.weight.w[((oc * self.cin + ic) * 3 + dy) * 3 + dx];
                        if wv == 0.0 {
                            continue;
                        }
                        for y in 0..h {
                            axpy(
                                &mut plane[y * w..(y + 1) * w],
                                wv,
                                &gpad[(y + 2 - dy) * pw + (2 - dx)..(y + 2 - dy) * pw + (2 - dx) + w],
                            );
                        }
                    }
                }
            }
        }
        gin
    }
}

/// Group normalization with affine scale/shift. The group count is the
/// largest divisor of the channel count not exceeding 8.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub c: usize,
    pub groups: usize,
    pub gamma: Param,
    pub beta: Param,
    xhat: Vec<f64>,
    invstd: Vec<f64>,
    hw: usize,
}

const GN_EPS: f64 = 1e-5;

impl GroupNorm {
    pub fn new(c: usize) -> Self {
        let groups = (1..=8.min(c)).rev().find(|g| c % g == 0).unwrap();
        GroupNorm {
            c,
            groups,
            gamma: Param::ones(c),
            beta: Param::zeros(c),
            xhat: Vec::new(),
            invstd: Vec::new(),
            hw: 0,
        }
    }

    pub fn visit(&mut self, prefix: &str, f: &mut ParamVisitor) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
    }

    pub fn forward(&mut self, x: &Feat) -> Feat {
        assert_eq!(x.c, self.c);
        let hw = x.hw();
        self.hw = hw;
        let cg = self.c / self.groups;
        let n = (cg * hw) as f64;
        self.xhat.resize(x.data.len(), 0.0);
        self.invstd.resize(self.groups, 0.0);
        let mut out = Feat::zeros(self.c, x.h, x.w);
        for g in 0..self.groups {
            let span = g * cg * hw..(g + 1) * cg * hw;
            let sl = &x.data[span.clone()];
            let mean = sl.iter().sum::<f64>() / n;
            let var = sl.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + GN_EPS).sqrt();
            self.invstd[g] = inv;
            for (xh, &v) in self.xhat[span.clone()].iter_mut().zip(sl) {
                *xh = (v - mean) * inv;
            }
        }
        for ch in 0..self.c {
            let (ga, be) = (self.gamma.w[ch], self.beta.w[ch]);
            for (o, &xh) in out.plane_mut(ch).iter_mut().zip(&self.xhat[ch * hw..(ch + 1) * hw]) {
                *o = ga * xh + be;
            }
        }
        out
    }

    pub fn backward(&mut self, gout: &Feat) -> Feat {
        let hw = self.hw;
        let cg = self.c / self.groups;
        let n = (cg * hw) as f64;
        let mut gin = Feat::zeros(self.c, gout.h, gout.w);
        // Affine grads and dxhat (written into gin as scratch).
        for ch in 0..self.c {
            let g = gout.plane(ch);
            let xh = &self.xhat[ch * hw..(ch + 1) * hw];
            self.gamma.g[ch] += dot(g, xh);
            self.beta.g[ch] += g.iter().sum::<f64>();
            let ga = self.gamma.w[ch];
            for (d, &gv) in gin.plane_mut(ch).iter_mut().zip(g) {
                *d = ga * gv;
            }
        }
        for g in 0..self.groups {
            let span = g * cg * hw..(g + 1) * cg * hw;
            let dxhat_mean = gin.data[span.clone()].iter().sum::<f64>() / n;
            let cross = dot(&gin.data[span.clone()], &self.xhat[span.clone()]) / n;
            let inv = self.invstd[g];
            for (d, &xh) in gin.data[span.clone()].iter_mut().zip(&self.xhat[span]) {
                *d = inv * (*d - dxhat_mean - xh * cross);
            }
        }
        gin
    }
}

/// SiLU (x·σ(x)) over a flat slice; `Feat` wrappers included.
#[derive(Debug, Clone, Default)]
pub struct Silu {
    x: Vec<f64>,
}

impl Silu {
    pub fn new() -> Self {
        Silu::default()
    }

    pub fn forward_slice(&mut self, x: &[f64]) -> Vec<f64> {
        self.x.clear();
        self.x.extend_from_slice(x);
        x.iter().map(|&v| v * sigmoid(v)).collect()
    }

    pub fn backward_slice(&self, g: &[f64]) -> Vec<f64> {
        g.iter()
            .zip(&self.x)
            .map(|(&gv, &v)| {
                let s = sigmoid(v);
                gv * (s + v * s * (1.0 - s))
            })
            .collect()
    }

    pub fn forward(&mut self, x: &Feat) -> Feat {
        Feat { c: x.c, h: x.h, w: x.w, data: self.forward_slice(&x.data) }
    }

    pub fn backward(&self, gout: &Feat) -> Feat {
        Feat { c: gout.c, h: gout.h, w: gout.w, data: self.backward_slice(&gout.data) }
    }
}

/// Fully-connected layer for timestep embeddings.
#[derive(Debug, Clone)]
pub struct Linear {
    pub cin: usize,
    pub cout: usize,
    pub weight: Param,
    pub bias: Param,
    x: Vec<f64>,
}

impl Linear {
    pub fn new(stream: &mut Stream, cin: usize, cout: usize) -> Self {
        let scale = 1.0 / (cin as f64).sqrt();
        Linear {
            cin,
            cout,
            weight: Param::randn(stream, cout * cin, scale),
            bias: Param::zeros(cout),
            x: Vec::new(),
        }
    }

    pub fn visit(&mut self, prefix: &str, f: &mut ParamVisitor) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }

    pub fn forward(&mut self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cin);
        self.x.clear();
        self.x.extend_from_slice(x);
        (0..self.cout)
            .map(|o| self.bias.w[o] + dot(&self.weight.w[o * self.cin..(o + 1) * self.cin], x))
            .collect()
    }

    pub fn backward(&mut self, g: &[f64]) -> Vec<f64> {
        assert_eq!(g.len(), self.cout);
        let mut gin = vec![0.0; self.cin];
        for o in 0..self.cout {
            self.bias.g[o] += g[o];
            axpy(&mut self.weight.g[o * self.cin..(o + 1) * self.cin], g[o], &self.x);
            axpy(&mut gin, g[o], &self.weight.w[o * self.cin..(o + 1) * self.cin]);
        }
        gin
    }
}

/// 2×2 average pooling, stride 2.
#[derive(Debug, Clone, Default)]
pub struct AvgPool2;

impl AvgPool2 {
    pub fn forward(&self, x: &Feat) -> Feat {
        assert!(x.h % 2 == 0 && x.w % 2 == 0);
        let (oh, ow) = (x.h / 2, x.w / 2);
        let mut out = Feat::zeros(x.c, oh, ow);
        for ch in 0..x.c {
            let src = x.plane(ch);
            let dst = out.plane_mut(ch);
            for y in 0..oh {
                for xj in 0..ow {
                    let base = 2 * y * x.w + 2 * xj;
                    dst[y * ow + xj] =
                        0.25 * (src[base] + src[base + 1] + src[base + x.w] + src[base + x.w + 1]);
                }
            }
        }
        out
    }

    pub fn backward(&self, gout: &Feat) -> Feat {
        let (h, w) = (gout.h * 2, gout.w * 2);
        let mut gin = Feat::zeros(gout.c, h, w);
        for ch in 0..gout.c {
            let g = gout.plane(ch);
            let dst = gin.plane_mut(ch);
            for y in 0..gout.h {
                for xj in 0..gout.w {
                    let gv = 0.25 * g[y * gout.w + xj];
                    let base = 2 * y * w + 2 * xj;
                    dst[base] = gv;
                    dst[base + 1] = gv;
                    dst[base + w] = gv;
                    dst[base + w + 1] = gv;
                }
            }
        }
        gin
    }
}

/// 2× nearest-neighbor upsampling.
#[derive(Debug, Clone, Default)]
pub struct Upsample2;

impl Upsample2 {
    pub fn forward(&self, x: &Feat) -> Feat {
        let (oh, ow) = (x.h * 2, x.w * 2);
        let mut out = Feat::zeros(x.c, oh, ow);
        for ch in 0..x.c {
            let src = x.plane(ch);
            let dst = out.plane_mut(ch);
            for y in 0..oh {
                for xj in 0..ow {
                    dst[y * ow + xj] = src[(y / 2) * x.w + xj / 2];
                }
            }
        }
        out
    }

    pub fn backward(&self, gout: &Feat) -> Feat {
        assert!(gout.h % 2 == 0 && gout.w % 2 == 0);
        let (h, w) = (gout.h / 2, gout.w / 2);
        let mut gin = Feat::zeros(gout.c, h, w);
        for ch in 0..gout.c {
            let g = gout.plane(ch);
            let dst = gin.plane_mut(ch);
            for y in 0..gout.h {
                for xj in 0..gout.w {
                    dst[(y / 2) * w + xj / 2] += g[y * gout.w + xj];
                }
            }
        }
        gin
    }
}

/// Pre-norm multi-head self-attention over all spatial positions, with a
/// residual connection: out = x + proj(attend(qkv(norm(x)))).
#[derive(Debug, Clone)]
pub struct Attention {
    pub c: usize,
    pub heads: usize,
    norm: GroupNorm,
    qkv: Conv,
    proj: Conv,
    qkv_out: Feat,
    attn: Vec<f64>,
}

impl Attention {
    pub fn new(stream: &mut Stream, c: usize, heads: usize) -> Self {
        assert!(c % heads == 0, "channels {c} not divisible by {heads} heads");
        Attention {
            c,
            heads,
            norm: GroupNorm::new(c),
            qkv: Conv::new(stream, c, 3 * c, 1),
            proj: Conv::new_zeroed(c, c, 1),
            qkv_out: Feat::zeros(0, 0, 0),
            attn: Vec::new(),
        }
    }

    pub fn visit(&mut self, prefix: &str, f: &mut ParamVisitor) {
        self.norm.visit(&format!("{prefix}.norm"), f);
        self.qkv.visit(&format!("{prefix}.qkv"), f);
        self.proj.visit(&format!("{prefix}.proj"), f);
    }

    pub fn forward(&mut self, x: &Feat) -> Feat {
        assert_eq!(x.c, self.c);
        let n = x.hw();
        let d = self.c / self.heads;
        let scale = 1.0 / (d as f64).sqrt();
        let normed = self.norm.forward(x);
        self.qkv_out = self.qkv.forward(&normed);
        let hw = n;
        let q0 = 0;
        let k0 = self.c * hw;
        let v0 = 2 * self.c * hw;
        self.attn.resize(self.heads * n * n, 0.0);
        let mut mixed = Feat::zeros(self.c, x.h, x.w);
        for hd in 0..self.heads {
            let att = &mut self.attn[hd * n * n..(hd + 1) * n * n];
            att.iter_mut().for_each(|v| *v = 0.0);
            // scores[i][j] = scale · Σ_c q[c][i] k[c][j]
            for cc in hd * d..(hd + 1) * d {
                let qp = &self.qkv_out.data[q0 + cc * hw..q0 + (cc + 1) * hw];
                let kp = &self.qkv_out.data[k0 + cc * hw..k0 + (cc + 1) * hw];
                for i in 0..n {
                    axpy(&mut att[i * n..(i + 1) * n], scale * qp[i], kp);
                }
            }
            // Row-wise softmax with max subtraction.
            for i in 0..n {
                let row = &mut att[i * n..(i + 1) * n];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                let inv = 1.0 / sum;
                row.iter_mut().for_each(|v| *v *= inv);
            }
            // out[c][i] = Σ_j attn[i][j] v[c][j]
            for cc in hd * d..(hd + 1) * d {
                let vp = &self.qkv_out.data[v0 + cc * hw..v0 + (cc + 1) * hw];
                let op = &mut mixed.data[cc * hw..(cc + 1) * hw];
                for i in 0..n {
                    op[i] = dot(&att[i * n..(i + 1) * n], vp);
                }
            }
        }
        let mut out = self.proj.forward(&mixed);
        for (o, &xi) in out.data.iter_mut().zip(&x.data) {
            *o += xi;
        }
        out
    }

    pub fn backward(&mut self, gout: &Feat) -> Feat {
        let n = gout.hw();
        let d = self.c / self.heads;
        let scale = 1.0 / (d as f64).sqrt();
        let hw = n;
        let q0 = 0;
        let k0 = self.c * hw;
        let v0 = 2 * self.c * hw;
        let dmixed = self.proj.backward(gout);
        let mut dqkv = Feat::zeros(3 * self.c, gout.h, gout.w);
        let mut da = vec![0.0; n * n];
        let mut ds = vec![0.0; n * n];
        for hd in 0..self.heads {
            let att = &self.attn[hd * n * n..(hd + 1) * n * n];
            da.iter_mut().for_each(|v| *v = 0.0);
            for cc in hd * d..(hd + 1) * d {
                let vp = &self.qkv_out.data[v0 + cc * hw..v0 + (cc + 1) * hw];
                let go = &dmixed.data[cc * hw..(cc + 1) * hw];
                // dV[j] += Σ_i attn[i][j]·dout[i]; dA[i][j] += dout[i]·V[j]
                for i in 0..n {
                    axpy(&mut dqkv.data[v0 + cc * hw..v0 + (cc + 1) * hw], go[i], &att[i * n..(i + 1) * n]);
                    axpy(&mut da[i * n..(i + 1) * n], go[i], vp);
                }
            }
            // Softmax backward per row: ds = a ⊙ (da − Σ da⊙a).
            for i in 0..n {
                let arow = &att[i * n..(i + 1) * n];
                let darow = &da[i * n..(i + 1) * n];
                let rho = dot(arow, darow);
                for j in 0..n {
                    ds[i * n + j] = arow[j] * (darow[j] - rho);
                }
            }
            for cc in hd * d..(hd + 1) * d {
                let qp = &self.qkv_out.data[q0 + cc * hw..q0 + (cc + 1) * hw];
                let kp = &self.qkv_out.data[k0 + cc * hw..k0 + (cc + 1) * hw];
                // dQ[i] = scale·Σ_j ds[i][j] K[j]; dK[j] = scale·Σ_i ds[i][j] Q[i]
                {
                    let dq = &mut dqkv.data[q0 + cc * hw..q0 + (cc + 1) * hw];
                    for i in 0..n {
                        dq[i] = scale * dot(&ds[i * n..(i + 1) * n], kp);
                    }
                }
                {
                    let dk = &mut dqkv.data[k0 + cc * hw..k0 + (cc + 1) * hw];
                    for i in 0..n {
                        axpy(dk, scale * qp[i], &ds[i * n..(i + 1) * n]);
                    }
                }
            }
        }
        let dnormed = self.qkv.backward(&dqkv);
        let mut gin = self.norm.backward(&dnormed);
        for (gi, &go) in gin.data.iter_mut().zip(&gout.data) {
            *gi += go;
        }
        gin
    }
}

/// Residual block: per-channel time bias on the input, two norm→SiLU→conv
/// stages, and a (possibly projected) skip connection.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub cin: usize,
    pub cout: usize,
    time: Linear,
    norm1: GroupNorm,
    act1: Silu,
    conv1: Conv,
    norm2: GroupNorm,
    act2: Silu,
    conv2: Conv,
    skip: Option<Conv>,
}

impl ResBlock {
    pub fn new(stream: &mut Stream, cin: usize, cout: usize, time_dim: usize) -> Self {
        ResBlock {
            cin,
            cout,
            time: Linear::new(stream, time_dim, cin),
            norm1: GroupNorm::new(cin),
            act1: Silu::new(),
            conv1: Conv::new(stream, cin, cout, 3),
            norm2: GroupNorm::new(cout),
            act2: Silu::new(),
            conv2: Conv::new_zeroed(cout, cout, 3),
            skip: (cin != cout).then(|| Conv::new(stream, cin, cout, 1)),
        }
    }

    pub fn visit(&mut self, prefix: &str, f: &mut ParamVisitor) {
        self.time.visit(&format!("{prefix}.time"), f);
        self.norm1.visit(&format!("{prefix}.norm1"), f);
        self.conv1.visit(&format!("{prefix}.conv1"), f);
        self.norm2.visit(&format!("{prefix}.norm2"), f);
        self.conv2.visit(&format!("{prefix}.conv2"), f);
        if let Some(s) = &mut self.skip {
            s.visit(&format!("{prefix}.skip"), f);
        }
    }

    pub fn forward(&mut self, x: &Feat, temb: &[f64]) -> Feat {
        let bias = self.time.forward(temb);
        let mut xb = x.clone();
        for ch in 0..self.cin {
            let b = bias[ch];
            xb.plane_mut(ch).iter_mut().for_each(|v| *v += b);
        }
        let h = self.conv1.forward(&self.act1.forward(&self.norm1.forward(&xb)));
        let h = self.conv2.forward(&self.act2.forward(&self.norm2.forward(&h)));
        let mut out = match &mut self.skip {
            Some(s) => s.forward(&xb),
            None => xb,
        };
        for (o, &hv) in out.data.iter_mut().zip(&h.data) {
            *o += hv;
        }
        out
    }

    /// Returns the gradient with respect to the block input; the gradient
    /// with respect to the (shared) time embedding is accumulated into
    /// `dtemb`.
    pub fn backward(&mut self, gout: &Feat, dtemb: &mut [f64]) -> Feat {
        let dh = self.norm2.backward(&self.act2.backward(&self.conv2.backward(gout)));
        let dpath = self.norm1.backward(&self.act1.backward(&self.conv1.backward(&dh)));
        let mut dxb = match &mut self.skip {
            Some(s) => s.backward(gout),
            None => gout.clone(),
        };
        for (d, &p) in dxb.data.iter_mut().zip(&dpath.data) {
            *d += p;
        }
        let dbias: Vec<f64> = (0..self.cin).map(|ch| dxb.plane(ch).iter().sum()).collect();
        let dt = self.time.backward(&dbias);
        for (acc, d) in dtemb.iter_mut().zip(dt) {
            *acc += d;
        }
        dxb
    }
}
