//! The denoiser interface used by the reverse-time sampler, plus oracle
//! implementations for testing the sampling machinery in isolation.

use crate::nn::feat::Feat;
use crate::nn::unet::UNet;
use crate::rng;

/// Predicts the noise component ε̂ of a bridge state.
///
/// `x_t` and `cond` are normalized-space maps of identical shape; `t` is the
/// schedule step. `noise_key` identifies the calling chain so stochastic
/// denoisers (used to emulate imperfect models) can derive reproducible
/// per-step noise; deterministic denoisers ignore it.
pub trait Denoiser {
    fn evaluate(&mut self, x_t: &Feat, cond: &Feat, t: usize, noise_key: u64) -> Feat;
}

/// Wraps a trained network. The conditioning map is whatever the model's
/// conditioning head produced for the chain; it is concatenated onto the
/// state along channels.
pub struct UNetDenoiser {
    pub net: UNet,
}

impl UNetDenoiser {
    pub fn new(net: UNet) -> Self {
        UNetDenoiser { net }
    }
}

impl Denoiser for UNetDenoiser {
    fn evaluate(&mut self, x_t: &Feat, cond: &Feat, t: usize, _noise_key: u64) -> Feat {
        let input = Feat::concat(x_t, cond).expect("state/conditioning shape mismatch");
        self.net.forward(&input, t as f64)
    }
}

/// Knows the ground truth and answers with the exact residual x_t − x₀, so a
/// reverse chain driven by it should reconstruct x₀ to rounding error.
pub struct ExactOracle {
    pub x0: Feat,
}

impl Denoiser for ExactOracle {
    fn evaluate(&mut self, x_t: &Feat, _cond: &Feat, _t: usize, _noise_key: u64) -> Feat {
        let mut eps = x_t.clone();
        for (e, &x) in eps.data.iter_mut().zip(&self.x0.data) {
            *e -= x;
        }
        eps
    }
}

/// Exact residual plus i.i.d. Gaussian error of scale `sigma`, emulating an
/// imperfect model. The error is a pure function of (seed, chain, step,
/// element), so repeated chains with the same keys reproduce exactly.
pub struct NoisyOracle {
    pub x0: Feat,
    pub sigma: f64,
    pub seed: u64,
}

impl Denoiser for NoisyOracle {
    fn evaluate(&mut self, x_t: &Feat, _cond: &Feat, t: usize, noise_key: u64) -> Feat {
        let mut eps = x_t.clone();
        for (e, &x) in eps.data.iter_mut().zip(&self.x0.data) {
            *e -= x;
        }
        let key = rng::key(self.seed ^ noise_key, &[0x0E44, t as u64]);
        for (i, e) in eps.data.iter_mut().enumerate() {
            *e += self.sigma * rng::normal(key, i as u64);
        }
        eps
    }
}

/// Predicts zero noise everywhere; the chain then follows the determinate
/// part of the schedule only. Useful as a worst-case baseline in tests.
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn evaluate(&mut self, x_t: &Feat, _cond: &Feat, _t: usize, _noise_key: u64) -> Feat {
        Feat::zeros(x_t.c, x_t.h, x_t.w)
    }
}
