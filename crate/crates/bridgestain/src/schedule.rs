//! Discrete Brownian-bridge noise schedule.
//!
//! The forward process interpolates from a target image x₀ at t = 0 to a
//! conditioning image y at t = T along a pinned diffusion bridge: the
//! marginal at step t is N((1−m_t)x₀ + m_t y, δ_t I) with m_t = t/T and
//! δ_t = 2 m_t (1 − m_t). Both endpoints are noise-free (δ₀ = δ_T = 0).
//!
//! All per-step coefficients for the forward one-step kernel and the reverse
//! posterior are precomputed at construction. Index t of every array refers
//! to the transition t → t−1 (reverse) or t−1 → t (forward). Index 0 is
//! unused padding so code can write `sched.c_x[t]` directly.

use crate::error::{Error, Result};
use crate::rng;

/// Precomputed schedule for a fixed step count T.
#[derive(Debug, Clone)]
pub struct BridgeSchedule {
    steps: usize,
    /// m_t for t in 0..=T.
    pub m: Vec<f64>,
    /// Marginal variance δ_t for t in 0..=T.
    pub delta: Vec<f64>,
    /// Forward one-step variance δ_{t|t−1} for t in 1..=T.
    pub delta_step: Vec<f64>,
    /// Reverse posterior variance δ̃_t for t in 1..=T.
    pub delta_tilde: Vec<f64>,
    /// Reverse mean coefficient on x_t.
    pub c_x: Vec<f64>,
    /// Reverse mean coefficient on y.
    pub c_y: Vec<f64>,
    /// Reverse mean coefficient on the predicted noise ε̂.
    pub c_eps: Vec<f64>,
}

impl BridgeSchedule {
    /// Builds the schedule for T uniform steps. T must be at least 2 so that
    /// an interior step exists.
    pub fn new(steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidConfig(format!(
                "step count must be at least 2, got {steps}"
            )));
        }
        let tf = steps as f64;
        let m: Vec<f64> = (0..=steps).map(|t| t as f64 / tf).collect();
        let delta: Vec<f64> = m.iter().map(|&mt| 2.0 * mt * (1.0 - mt)).collect();

        let mut delta_step = vec![0.0; steps + 1];
        let mut delta_tilde = vec![0.0; steps + 1];
        let mut c_x = vec![0.0; steps + 1];
        let mut c_y = vec![0.0; steps + 1];
        let mut c_eps = vec![0.0; steps + 1];

        for t in 1..=steps {
            let (ms, mt) = (m[t - 1], m[t]);
            let (ds, dt) = (delta[t - 1], delta[t]);
            let shrink = (1.0 - mt) / (1.0 - ms);
            delta_step[t] = dt - ds * shrink * shrink;

            if t == steps {
                // Pinned terminal: x_T = y exactly, so the reverse step is the
                // bridge marginal at T−1 around the implied estimate of x₀.
                c_x[t] = 1.0 - ms;
                c_y[t] = ms;
                c_eps[t] = 1.0 - ms;
                delta_tilde[t] = ds;
            } else {
                c_x[t] = (ds / dt) * shrink + (delta_step[t] / dt) * (1.0 - ms);
                c_y[t] = ms - mt * shrink * (ds / dt);
                c_eps[t] = (1.0 - ms) * (delta_step[t] / dt);
                delta_tilde[t] = delta_step[t] * ds / dt;
            }
        }

        Ok(BridgeSchedule { steps, m, delta, delta_step, delta_tilde, c_x, c_y, c_eps })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// True for the one reverse step whose noise level is pinned to zero on
    /// the source side (t = T, where x_T = y has no noise to strip).
    pub fn is_pinned_terminal(&self, t: usize) -> bool {
        t == self.steps
    }

    fn check_step(&self, t: usize, lo: usize, hi: usize) -> Result<()> {
        if t < lo || t > hi {
            return Err(Error::InvalidStep { t, lo, hi });
        }
        Ok(())
    }

    /// Draws x_t ~ q(x_t | x₀, y) elementwise: (1−m_t)x₀ + m_t y + √δ_t ε.
    ///
    /// `noise` must be standard normal draws, one per element.
    pub fn forward_sample(
        &self,
        t: usize,
        x0: &[f64],
        y: &[f64],
        noise: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        self.check_step(t, 0, self.steps)?;
        if x0.len() != y.len() || x0.len() != noise.len() || x0.len() != out.len() {
            return Err(Error::InvalidInput("forward_sample length mismatch".into()));
        }
        let (mt, sd) = (self.m[t], self.delta[t].sqrt());
        for i in 0..out.len() {
            out[i] = (1.0 - mt) * x0[i] + mt * y[i] + sd * noise[i];
        }
        Ok(())
    }

    /// The regression target for the noise head at step t:
    /// m_t (y − x₀) + √δ_t ε. Subtracting it from x_t recovers x₀ exactly.
    pub fn training_target(
        &self,
        t: usize,
        x0: &[f64],
        y: &[f64],
        noise: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        self.check_step(t, 1, self.steps)?;
        if x0.len() != y.len() || x0.len() != noise.len() || x0.len() != out.len() {
            return Err(Error::InvalidInput("training_target length mismatch".into()));
        }
        let (mt, sd) = (self.m[t], self.delta[t].sqrt());
        for i in 0..out.len() {
            out[i] = mt * (y[i] - x0[i]) + sd * noise[i];
        }
        Ok(())
    }

    /// Mean of the reverse posterior p(x_{t−1} | x_t, y, ε̂):
    /// c_x x_t − c_ε ε̂ + c_y y. Valid for t in 1..=T.
    pub fn posterior_mean(
        &self,
        t: usize,
        x_t: &[f64],
        y: &[f64],
        eps_hat: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        self.check_step(t, 1, self.steps)?;
        if x_t.len() != y.len() || x_t.len() != eps_hat.len() || x_t.len() != out.len() {
            return Err(Error::InvalidInput("posterior_mean length mismatch".into()));
        }
        let (cx, cy, ce) = (self.c_x[t], self.c_y[t], self.c_eps[t]);
        for i in 0..out.len() {
            out[i] = cx * x_t[i] - ce * eps_hat[i] + cy * y[i];
        }
        Ok(())
    }

    /// Direct estimate of x₀ from a state and a noise prediction:
    /// x̂₀ = x_t − ε̂.
    pub fn x0_from_eps(&self, t: usize, x_t: &[f64], eps_hat: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_step(t, 1, self.steps)?;
        if x_t.len() != eps_hat.len() || x_t.len() != out.len() {
            return Err(Error::InvalidInput("x0_from_eps length mismatch".into()));
        }
        for i in 0..out.len() {
            out[i] = x_t[i] - eps_hat[i];
        }
        Ok(())
    }

    /// Total reverse-noise variance injected by a full chain that samples
    /// steps T..=t_stop+1: Σ δ̃_t over that range.
    pub fn noise_budget(&self, t_stop: usize) -> f64 {
        self.delta_tilde[t_stop + 1..=self.steps].iter().sum()
    }
}

/// Standard-normal vector for the reverse step at time t, keyed so that two
/// chains with the same seed agree step-for-step regardless of strategy.
pub fn step_noise(seed: u64, t: usize, len: usize) -> Vec<f64> {
    let key = rng::key(seed, &[0x57E9, t as u64]);
    let mut out = vec![0.0; len];
    rng::fill_normal(key, &mut out);
    out
}
