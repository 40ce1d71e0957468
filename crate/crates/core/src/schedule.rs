//! Linear-beta diffusion schedule, forward noising and the two reverse steps
//! (stochastic ancestral and deterministic implicit with eta = 0).
//!
//! Timesteps are 1-based: `t = 1..=T`. `alpha_bar(0)` is defined as 1 so the
//! terminal implicit step returns the clean estimate itself.

use ndarray::{Array4, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseClip;

/// A clip `x_t` at diffusion timestep `t` (`t = 0` means a denoised estimate).
#[derive(Clone, Debug, PartialEq)]
pub struct LatentClip {
    pub frames: Array4<f32>,
    pub t: usize,
}

/// The scalars a schedule is rebuilt from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub ddim_steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { timesteps: 1000, beta_start: 1e-4, beta_end: 0.02, ddim_steps: 25 }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        make_linear_schedule(self.timesteps, self.beta_start, self.beta_end)?.with_ddim_steps(self.ddim_steps)
    }
}

/// Precomputed schedule arrays (all `f64`), indexed by `t - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    timesteps: usize,
    beta_start: f64,
    beta_end: f64,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
    ddim_steps: Vec<usize>,
}

pub fn make_linear_schedule(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    if timesteps == 0 {
        return Err(Error::Parameter("schedule needs at least one timestep".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Parameter(format!(
            "need 0 < beta_start <= beta_end < 1 (got {beta_start}, {beta_end})"
        )));
    }
    let betas: Vec<f64> = (0..timesteps)
        .map(|i| {
            if timesteps == 1 {
                beta_start
            } else {
                beta_start + i as f64 / (timesteps - 1) as f64 * (beta_end - beta_start)
            }
        })
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let alpha_bars: Vec<f64> = alphas
        .iter()
        .scan(1.0f64, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    let sigmas = (0..timesteps)
        .map(|i| {
            let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
            ((1.0 - prev) / (1.0 - alpha_bars[i]) * betas[i]).sqrt()
        })
        .collect();
    Ok(DiffusionSchedule {
        timesteps,
        beta_start,
        beta_end,
        betas,
        alphas,
        alpha_bars,
        sigmas,
        ddim_steps: (1..=timesteps).collect(),
    })
}

/// Uniform-stride subsequence of `1..=T` with `n_steps` elements ending at `T`.
pub fn make_ddim_timesteps(timesteps: usize, n_steps: usize) -> Result<Vec<usize>> {
    if n_steps == 0 || n_steps > timesteps {
        return Err(Error::Parameter(format!("need 1 <= n_steps <= T (got n_steps={n_steps}, T={timesteps})")));
    }
    let stride = timesteps / n_steps;
    Ok((0..n_steps).map(|i| timesteps - (n_steps - 1 - i) * stride).collect())
}

impl DiffusionSchedule {
    pub fn with_ddim_steps(mut self, n_steps: usize) -> Result<Self> {
        self.ddim_steps = make_ddim_timesteps(self.timesteps, n_steps)?;
        Ok(self)
    }

    pub fn config(&self) -> ScheduleConfig {
        ScheduleConfig {
            timesteps: self.timesteps,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            ddim_steps: self.ddim_steps.len(),
        }
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// Increasing inference timesteps; the reverse loop walks them backwards.
    pub fn ddim_steps(&self) -> &[usize] {
        &self.ddim_steps
    }

    /// `(t, t_prev)` pairs in reverse-loop order, ending with `t_prev = 0`.
    pub fn ddim_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.ddim_steps.len())
            .rev()
            .map(|i| (self.ddim_steps[i], if i == 0 { 0 } else { self.ddim_steps[i - 1] }))
            .collect()
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.timesteps {
            return Err(Error::TimestepOutOfRange { t, lo: 1, hi: self.timesteps });
        }
        Ok(())
    }
}

fn check_same_shape(a: &Array4<f32>, b: &Array4<f32>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn q_sample(x0: &Array4<f32>, t: usize, eps: &NoiseClip, sched: &DiffusionSchedule) -> Result<LatentClip> {
    sched.check_t(t)?;
    check_same_shape(x0, &eps.frames, "q_sample")?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
    let frames = Zip::from(x0).and(&eps.frames).map_collect(|&x, &e| a * x + b * e);
    Ok(LatentClip { frames, t })
}

/// Deterministic implicit step from `t` to `t_prev` given a noise prediction.
pub fn ddim_step(
    x_t: &LatentClip,
    eps_pred: &NoiseClip,
    t: usize,
    t_prev: usize,
    sched: &DiffusionSchedule,
) -> Result<LatentClip> {
    sched.check_t(t)?;
    if t_prev >= t {
        return Err(Error::Ordering { t, t_prev });
    }
    check_same_shape(&x_t.frames, &eps_pred.frames, "ddim_step")?;
    let ab = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t_prev);
    let (sa, sb) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
    let frames = if t_prev == 0 {
        Zip::from(&x_t.frames).and(&eps_pred.frames).map_collect(|&x, &e| (x - sb * e) / sa)
    } else {
        let (pa, pb) = (ab_prev.sqrt() as f32, (1.0 - ab_prev).sqrt() as f32);
        Zip::from(&x_t.frames).and(&eps_pred.frames).map_collect(|&x, &e| {
            let x0 = (x - sb * e) / sa;
            pa * x0 + pb * e
        })
    };
    Ok(LatentClip { frames, t: t_prev })
}

/// Ancestral step: posterior mean plus `sigma_t z` (no noise at `t = 1`).
pub fn ddpm_step<R: Rng + ?Sized>(
    x_t: &LatentClip,
    eps_pred: &NoiseClip,
    t: usize,
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> Result<LatentClip> {
    sched.check_t(t)?;
    check_same_shape(&x_t.frames, &eps_pred.frames, "ddpm_step")?;
    let beta = sched.betas[t - 1];
    let coef = beta / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = 1.0 / sched.alphas[t - 1].sqrt();
    let sigma = sched.sigmas[t - 1];
    let frames = Zip::from(&x_t.frames).and(&eps_pred.frames).map_collect(|&x, &e| {
        (inv_sqrt_alpha * (x as f64 - coef * e as f64)) as f32
    });
    let frames = if t == 1 {
        frames
    } else {
        frames.mapv(|m| m + (sigma * rng.sample::<f64, _>(StandardNormal)) as f32)
    };
    Ok(LatentClip { frames, t: t - 1 })
}
