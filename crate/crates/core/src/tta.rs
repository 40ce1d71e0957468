//! Stream restoration with online test-time adaptation.
//!
//! A video is cut into overlapping clips restored one after another by
//! implicit sampling from temporal noise. From the second clip on, every
//! reverse step is preceded by one gradient step of a noise-regression proxy
//! loss on tubelets cut from the previous clip's (degraded, restored) pair,
//! and overlapping frames are averaged with the previous clip's output.

use std::time::Instant;

use ndarray::{s, Array4, Array5, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{clip_starts, FrameSequence, VideoClip};
use crate::denoiser::{from_signal, predict_batch, to_signal, ModelWeights};
use crate::error::{Error, Result};
use crate::noise::NoiseModel;
use crate::schedule::{ddim_step, DiffusionSchedule, LatentClip};
use crate::seed;
use crate::train::{batch_loss_and_grads, lion_step, LossItem, OptimizerKind, OptimizerState, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TtaOptimizer {
    /// `w -= adapt_lr * grad`.
    Sgd,
    /// Lion with `adapt_lr`, momentum reset per clip.
    Lion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TTAConfig {
    /// Adapt at all; when off every clip is plain conditional sampling.
    pub enabled: bool,
    pub n_tubelets: usize,
    pub tubelet_size: usize,
    pub adapt_lr: f64,
    pub clip_stride: usize,
    pub freeze_last_layer: bool,
    /// Carry adapted weights into the next clip instead of resetting.
    pub accumulate_weights: bool,
    pub optimizer: TtaOptimizer,
}

impl Default for TTAConfig {
    fn default() -> Self {
        TTAConfig {
            enabled: true,
            n_tubelets: 5,
            tubelet_size: 32,
            adapt_lr: 1e-4,
            clip_stride: 3,
            freeze_last_layer: true,
            accumulate_weights: false,
            optimizer: TtaOptimizer::Sgd,
        }
    }
}

impl TTAConfig {
    pub fn validate(&self, n_frames: usize) -> Result<()> {
        if self.n_tubelets == 0 || self.tubelet_size == 0 {
            return Err(Error::Parameter("tta.n_tubelets and tta.tubelet_size must be positive".into()));
        }
        if self.clip_stride == 0 || self.clip_stride > n_frames {
            return Err(Error::Parameter(format!("tta.clip_stride must lie in [1, {n_frames}], got {}", self.clip_stride)));
        }
        if !(self.adapt_lr >= 0.0 && self.adapt_lr.is_finite()) {
            return Err(Error::Parameter(format!("tta.adapt_lr must be non-negative, got {}", self.adapt_lr)));
        }
        Ok(())
    }
}

/// Co-located spatio-temporal crops `[n, N_f, C, s, s]` of a degraded clip
/// and its restoration.
#[derive(Clone, Debug, PartialEq)]
pub struct TubeletPair {
    pub degraded: Array5<f32>,
    pub restored: Array5<f32>,
    pub positions: Vec<(usize, usize)>,
}

pub fn tubelet_crop(
    degraded: &VideoClip,
    restored: &VideoClip,
    n: usize,
    size: usize,
    rng: &mut impl Rng,
) -> Result<TubeletPair> {
    let shape = degraded.frames.shape();
    if shape != restored.frames.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", shape, restored.frames.shape())));
    }
    let (f, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if size == 0 || size > h || size > w {
        return Err(Error::Parameter(format!("tubelet size {size} does not fit {h}x{w} frames")));
    }
    let positions: Vec<(usize, usize)> = (0..n).map(|_| (rng.random_range(0..=h - size), rng.random_range(0..=w - size))).collect();
    let mut out_d = Array5::zeros([n, f, c, size, size]);
    let mut out_r = Array5::zeros([n, f, c, size, size]);
    for (i, &(y, x)) in positions.iter().enumerate() {
        let win = s![.., .., y..y + size, x..x + size];
        out_d.index_axis_mut(Axis(0), i).assign(&degraded.frames.slice(win));
        out_r.index_axis_mut(Axis(0), i).assign(&restored.frames.slice(win));
    }
    Ok(TubeletPair { degraded: out_d, restored: out_r, positions })
}

/// Optimizer memory carried across the steps of one clip.
pub struct AdaptState {
    lion: Option<OptimizerState>,
}

impl AdaptState {
    pub fn new(weights: &ModelWeights, cfg: &TTAConfig) -> Self {
        AdaptState { lion: (cfg.optimizer == TtaOptimizer::Lion).then(|| OptimizerState::new(weights)) }
    }
}

fn lion_cfg() -> TrainConfig {
    TrainConfig { weight_decay: 0.0, optimizer: OptimizerKind::Lion, ..TrainConfig::default() }
}

/// One proxy-loss step on `weights_bar` at reverse timestep `t`: fresh noise
/// per tubelet, restored tubelets as targets, degraded tubelets as
/// condition. Returns the pre-update loss. A non-finite loss or gradient
/// leaves the weights untouched and reports an adaptation fault.
#[allow(clippy::too_many_arguments)]
pub fn tsc_adapt_step(
    weights_bar: &mut ModelWeights,
    pair: &TubeletPair,
    t: usize,
    sched: &DiffusionSchedule,
    noise: &NoiseModel,
    cfg: &TTAConfig,
    state: &mut AdaptState,
    noise_seed: u64,
) -> Result<f64> {
    let items = (0..pair.positions.len())
        .map(|i| {
            let restored = pair.restored.index_axis(Axis(0), i).to_owned();
            let degraded = pair.degraded.index_axis(Axis(0), i).to_owned();
            let sh = restored.shape();
            let eps = noise.sample([sh[0], sh[1], sh[2], sh[3]], seed::derive(noise_seed, &[i as u64]))?;
            Ok(LossItem { x0: to_signal(&restored), cond: to_signal(&degraded), t, eps: eps.frames })
        })
        .collect::<Result<Vec<_>>>()?;
    let (loss, mut grads) = batch_loss_and_grads(weights_bar, &items, sched)?;
    if !loss.is_finite() || !grads.all_finite() {
        return Err(Error::AdaptationFault(format!("non-finite adaptation loss/gradient at t={t}")));
    }
    if cfg.adapt_lr == 0.0 {
        return Ok(loss);
    }
    if cfg.freeze_last_layer {
        for (p, g) in weights_bar.params.iter().zip(&mut grads.tensors) {
            if p.last_layer {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    match (&mut state.lion, cfg.optimizer) {
        (Some(lion), TtaOptimizer::Lion) => {
            let frozen: Vec<(usize, Vec<f32>)> = weights_bar
                .params
                .iter()
                .enumerate()
                .filter(|(_, p)| cfg.freeze_last_layer && p.last_layer)
                .map(|(i, p)| (i, p.data.clone()))
                .collect();
            lion_step(weights_bar, &grads, lion, cfg.adapt_lr, &lion_cfg())?;
            for (i, data) in frozen {
                weights_bar.params[i].data = data;
            }
        }
        _ => weights_bar.sgd_update(&grads, cfg.adapt_lr as f32, cfg.freeze_last_layer),
    }
    if !weights_bar.all_finite() {
        return Err(Error::AdaptationFault(format!("weights became non-finite at t={t}")));
    }
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdaptRecord {
    pub timestep: usize,
    pub loss: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct ClipOutcome {
    pub restored: VideoClip,
    pub adapted_weights: ModelWeights,
    pub adaptation: Vec<AdaptRecord>,
    /// Set when adaptation was abandoned for this clip.
    pub fault: Option<String>,
}

/// Restores one clip. With `prev = Some((degraded, restored))` and
/// adaptation enabled, each reverse step is preceded by one proxy step on
/// tubelets from `prev`. The latent start and all noise draws are keyed by
/// `(seed, clip index)` so enabling adaptation never shifts them.
#[allow(clippy::too_many_arguments)]
pub fn adapt_and_restore(
    clip: &VideoClip,
    prev: Option<(&VideoClip, &VideoClip)>,
    theta: &ModelWeights,
    sched: &DiffusionSchedule,
    noise: &NoiseModel,
    cfg: &TTAConfig,
    base_seed: u64,
) -> Result<ClipOutcome> {
    let k = clip.clip_index as u64;
    let sh = clip.frames.shape();
    let shape = [sh[0], sh[1], sh[2], sh[3]];
    let mut theta_bar = theta.clone();
    let mut x = LatentClip { frames: noise.sample(shape, seed::derive(base_seed, &[seed::tag::LATENT, k]))?.frames, t: sched.timesteps() };
    let cond = to_signal(&clip.frames);

    let mut tubelets = match prev.filter(|_| cfg.enabled) {
        Some((pd, pr)) => {
            let mut rng = seed::rng(base_seed, &[seed::tag::TUBELET, k]);
            Some(tubelet_crop(pd, pr, cfg.n_tubelets, cfg.tubelet_size, &mut rng)?)
        }
        None => None,
    };
    let mut state = AdaptState::new(theta, cfg);
    let mut adaptation = Vec::new();
    let mut fault = None;
    for (t, t_prev) in sched.ddim_pairs() {
        if let Some(pair) = &tubelets {
            let start = Instant::now();
            let noise_seed = seed::derive(base_seed, &[seed::tag::ADAPT_NOISE, k, t as u64]);
            match tsc_adapt_step(&mut theta_bar, pair, t, sched, noise, cfg, &mut state, noise_seed) {
                Ok(loss) => adaptation.push(AdaptRecord { timestep: t, loss, wall_ms: start.elapsed().as_secs_f64() * 1e3 }),
                Err(Error::AdaptationFault(msg)) => {
                    theta_bar = theta.clone();
                    tubelets = None;
                    fault = Some(msg);
                }
                Err(e) => return Err(e),
            }
        }
        let eps = predict_batch(&theta_bar, &[x.frames.view()], &[cond.view()], &[t])?.pop().unwrap();
        if eps.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalDegeneracy(format!("non-finite noise prediction at t={t}")));
        }
        let eps = crate::noise::NoiseClip { frames: eps, arma: None, seed: 0 };
        x = ddim_step(&x, &eps, t, t_prev, sched)?;
    }
    let restored = VideoClip::new(from_signal(&x.frames), clip.clip_index, clip.video_id.clone());
    Ok(ClipOutcome { restored, adapted_weights: theta_bar, adaptation, fault })
}

/// Replaces the first `overlap` frames of `current` by their mean with the
/// last `overlap` frames of `previous`.
pub fn integrate_frames(current: &VideoClip, previous: &VideoClip, overlap: usize) -> Result<VideoClip> {
    let n = current.n_frames();
    if previous.frames.shape() != current.frames.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", current.frames.shape(), previous.frames.shape())));
    }
    if overlap > n {
        return Err(Error::Parameter(format!("overlap {overlap} exceeds clip length {n}")));
    }
    let mut out = current.clone();
    let prev_tail = previous.frames.slice(s![n - overlap.., .., .., ..]);
    out.frames.slice_mut(s![..overlap, .., .., ..]).zip_mut_with(&prev_tail, |a, &b| *a = (*a + b) / 2.0);
    Ok(out)
}

/// Overlap integration for clips `stride` frames apart.
pub fn integrate_overlap(current: &VideoClip, previous_restored: &VideoClip, stride: usize) -> Result<VideoClip> {
    let n = current.n_frames();
    if stride == 0 || stride > n {
        return Err(Error::Parameter(format!("stride must lie in [1, {n}], got {stride}")));
    }
    integrate_frames(current, previous_restored, n - stride)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClipLog {
    pub clip: usize,
    pub start_frame: usize,
    pub adaptation: Vec<AdaptRecord>,
    pub fault: Option<String>,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct StreamOutcome {
    pub restored: FrameSequence,
    pub clips: Vec<ClipLog>,
}

impl StreamOutcome {
    pub fn fault_count(&self) -> usize {
        self.clips.iter().filter(|c| c.fault.is_some()).count()
    }
}

/// Restores a whole video clip by clip. Frames covered by several clips end
/// up with the value written by the last clip that covers them, after that
/// clip's overlap integration.
pub fn restore_stream(
    frames: &FrameSequence,
    theta: &ModelWeights,
    sched: &DiffusionSchedule,
    noise: &NoiseModel,
    cfg: &TTAConfig,
    base_seed: u64,
    video_id: &str,
) -> Result<StreamOutcome> {
    let n_f = theta.config.n_frames;
    cfg.validate(n_f)?;
    let starts = clip_starts(frames.len(), n_f, cfg.clip_stride)?;
    let mut out = frames.frames.clone();
    let mut logs = Vec::with_capacity(starts.len());
    let mut prev: Option<(VideoClip, VideoClip, usize)> = None;
    let mut weights = theta.clone();
    for (k, &start) in starts.iter().enumerate() {
        let timer = Instant::now();
        let clip = VideoClip::new(frames.clip(start, n_f), k, video_id.to_string());
        let res = adapt_and_restore(&clip, prev.as_ref().map(|(d, r, _)| (d, r)), &weights, sched, noise, cfg, base_seed)?;
        let restored = match &prev {
            Some((_, prev_restored, prev_start)) => integrate_frames(&res.restored, prev_restored, prev_start + n_f - start)?,
            None => res.restored,
        };
        if cfg.accumulate_weights && res.fault.is_none() {
            weights = res.adapted_weights;
        }
        out.slice_mut(s![start..start + n_f, .., .., ..]).assign(&restored.frames);
        logs.push(ClipLog { clip: k, start_frame: start, adaptation: res.adaptation, fault: res.fault, wall_ms: timer.elapsed().as_secs_f64() * 1e3 });
        prev = Some((clip, restored, start));
    }
    Ok(StreamOutcome { restored: FrameSequence { frames: out, fps: frames.fps }, clips: logs })
}

/// The latent a clip starts from, exposed for checks.
pub fn initial_latent(shape: [usize; 4], noise: &NoiseModel, base_seed: u64, clip_index: usize) -> Result<Array4<f32>> {
    Ok(noise.sample(shape, seed::derive(base_seed, &[seed::tag::LATENT, clip_index as u64]))?.frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_clean_video;
    use crate::denoiser::{forward, init_weights, DenoiserConfig};
    use crate::schedule::ScheduleConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelWeights {
        let mut w = init_weights(&DenoiserConfig { width: 4, n_blocks: 2, time_embed_dim: 8, ..Default::default() }, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in &mut w.params {
            for v in &mut p.data {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        w
    }

    fn sched(steps: usize) -> DiffusionSchedule {
        ScheduleConfig { ddim_steps: steps, ..Default::default() }.build().unwrap()
    }

    fn clip(seed: u64, k: usize, res: usize) -> VideoClip {
        VideoClip::new(gen_clean_video(5, res, seed).unwrap().frames, k, "v".into())
    }

    fn cfg(lr: f64) -> TTAConfig {
        TTAConfig { tubelet_size: 8, n_tubelets: 2, adapt_lr: lr, ..Default::default() }
    }

    #[test]
    fn crop_bounds_and_determinism() {
        let (a, b) = (clip(1, 0, 64), clip(2, 0, 64));
        let p = tubelet_crop(&a, &b, 5, 32, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(p.positions.iter().all(|&(y, x)| y <= 32 && x <= 32));
        assert_eq!(p.degraded.shape(), &[5, 5, 3, 32, 32]);
        assert_eq!(p, tubelet_crop(&a, &b, 5, 32, &mut ChaCha8Rng::seed_from_u64(3)).unwrap());
        let (y, x) = p.positions[2];
        assert_eq!(p.restored[[2, 4, 1, 3, 5]], b.frames[[4, 1, y + 3, x + 5]]);
        assert_eq!(p.degraded[[2, 0, 2, 0, 0]], a.frames[[0, 2, y, x]]);

        let whole = tubelet_crop(&a, &b, 3, 64, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(whole.positions.iter().all(|&p| p == (0, 0)));
        assert!(matches!(tubelet_crop(&a, &b, 3, 65, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::Parameter(_))));
    }

    fn pair() -> TubeletPair {
        tubelet_crop(&clip(3, 0, 16), &clip(4, 0, 16), 2, 8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn zero_rate_leaves_weights_alone() {
        let w = tiny();
        let mut wb = w.clone();
        let c = cfg(0.0);
        let loss = tsc_adapt_step(&mut wb, &pair(), 500, &sched(25), &NoiseModel::default(), &c, &mut AdaptState::new(&w, &c), 1).unwrap();
        assert!(loss > 0.0);
        assert_eq!(wb, w);
    }

    #[test]
    fn last_layer_is_frozen_and_others_move() {
        for opt in [TtaOptimizer::Sgd, TtaOptimizer::Lion] {
            let w = tiny();
            let mut wb = w.clone();
            let c = TTAConfig { optimizer: opt, ..cfg(1e-2) };
            let mut st = AdaptState::new(&w, &c);
            for t in [900, 500, 100] {
                tsc_adapt_step(&mut wb, &pair(), t, &sched(25), &NoiseModel::default(), &c, &mut st, t as u64).unwrap();
            }
            for (a, b) in w.params.iter().zip(&wb.params) {
                if a.last_layer {
                    assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()), "{}", a.name);
                }
            }
            assert!(w.params.iter().zip(&wb.params).any(|(a, b)| !a.last_layer && a.data != b.data));
        }
    }

    #[test]
    fn small_step_descends() {
        let w = tiny();
        let c = cfg(1e-4);
        let (p, s) = (pair(), sched(25));
        let noise = NoiseModel::default();
        // Same noise seed before and after, so the batch is fixed.
        let before = {
            let mut probe = w.clone();
            let zero = cfg(0.0);
            tsc_adapt_step(&mut probe, &p, 400, &s, &noise, &zero, &mut AdaptState::new(&w, &zero), 9).unwrap()
        };
        let mut wb = w.clone();
        tsc_adapt_step(&mut wb, &p, 400, &s, &noise, &c, &mut AdaptState::new(&w, &c), 9).unwrap();
        let zero = cfg(0.0);
        let after = tsc_adapt_step(&mut wb.clone(), &p, 400, &s, &noise, &zero, &mut AdaptState::new(&w, &zero), 9).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn nan_input_faults_and_reverts() {
        let w = tiny();
        let mut p = pair();
        p.restored[[0, 0, 0, 0, 0]] = f32::NAN;
        let c = cfg(1e-2);
        let mut wb = w.clone();
        let r = tsc_adapt_step(&mut wb, &p, 300, &sched(25), &NoiseModel::default(), &c, &mut AdaptState::new(&w, &c), 1);
        assert!(matches!(r, Err(Error::AdaptationFault(_))));
        assert_eq!(wb, w);
    }

    #[test]
    fn first_clip_is_plain_sampling() {
        let w = tiny();
        let s = sched(5);
        let noise = NoiseModel::default();
        let c = clip(7, 0, 16);
        let out = adapt_and_restore(&c, None, &w, &s, &noise, &cfg(1e-2), 3).unwrap();
        assert!(out.adaptation.is_empty());
        assert_eq!(out.adapted_weights, w);
        // Hand-rolled reverse loop.
        let mut x = LatentClip { frames: initial_latent([5, 3, 16, 16], &noise, 3, 0).unwrap(), t: 1000 };
        for (t, tp) in s.ddim_pairs() {
            let eps = forward(&x, &c, t, &w).unwrap();
            x = ddim_step(&x, &eps, t, tp, &s).unwrap();
        }
        assert_eq!(out.restored.frames, from_signal(&x.frames));
        assert!(out.restored.frames.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn one_adaptation_step_per_reverse_step() {
        let w = tiny();
        let s = sched(25);
        let (c0, c1) = (clip(1, 0, 16), clip(1, 1, 16));
        let out = adapt_and_restore(&c1, Some((&c0, &c0)), &w, &s, &NoiseModel::default(), &cfg(1e-3), 3).unwrap();
        assert_eq!(out.adaptation.len(), 25);
        let ts: Vec<usize> = out.adaptation.iter().map(|r| r.timestep).collect();
        assert_eq!(ts, s.ddim_pairs().iter().map(|p| p.0).collect::<Vec<_>>());
    }

    #[test]
    fn integration_examples() {
        let a = VideoClip::new(Array4::from_elem([5, 1, 2, 2], 0.2), 1, "v".into());
        let b = VideoClip::new(Array4::from_elem([5, 1, 2, 2], 0.6), 0, "v".into());
        assert_eq!(integrate_overlap(&a, &b, 5).unwrap(), a);
        assert_eq!(integrate_overlap(&a, &a, 3).unwrap(), a);
        let m = integrate_overlap(&a, &b, 3).unwrap();
        assert_eq!(m.frames[[0, 0, 0, 0]], (0.2f32 + 0.6) / 2.0);
        assert_eq!(m.frames[[1, 0, 1, 1]], (0.2f32 + 0.6) / 2.0);
        assert_eq!(m.frames[[2, 0, 0, 0]], 0.2);
        assert!(integrate_overlap(&a, &b, 0).is_err());
        assert!(integrate_overlap(&a, &b, 6).is_err());
    }

    fn stream(n: usize) -> FrameSequence {
        gen_clean_video(n, 16, 21).unwrap()
    }

    #[test]
    fn stream_tiling_and_determinism() {
        let w = tiny();
        let s = sched(3);
        let noise = NoiseModel::default();
        let c = cfg(1e-3);
        let out = restore_stream(&stream(13), &w, &s, &noise, &c, 4, "v").unwrap();
        assert_eq!(out.restored.frames.shape(), &[13, 3, 16, 16]);
        assert_eq!(out.clips.iter().map(|c| c.start_frame).collect::<Vec<_>>(), vec![0, 3, 6, 8]);
        assert!(out.clips[0].adaptation.is_empty());
        assert!(out.clips[1..].iter().all(|c| c.adaptation.len() == 3));
        let again = restore_stream(&stream(13), &w, &s, &noise, &c, 4, "v").unwrap();
        assert_eq!(out.restored, again.restored);

        let single = restore_stream(&stream(5), &w, &s, &noise, &c, 4, "v").unwrap();
        assert_eq!(single.clips.len(), 1);
        assert!(matches!(restore_stream(&stream(4), &w, &s, &noise, &c, 4, "v"), Err(Error::InsufficientFrames { .. })));
    }

    #[test]
    fn zero_rate_matches_disabled_adaptation() {
        let w = tiny();
        let s = sched(4);
        let noise = NoiseModel::default();
        let on = restore_stream(&stream(11), &w, &s, &noise, &cfg(0.0), 8, "v").unwrap();
        let off = restore_stream(&stream(11), &w, &s, &noise, &TTAConfig { enabled: false, ..cfg(0.5) }, 8, "v").unwrap();
        assert_eq!(on.restored, off.restored);
        assert!(on.clips[1].adaptation.len() == 4 && off.clips[1].adaptation.is_empty());
        let moving = restore_stream(&stream(11), &w, &s, &noise, &cfg(1e-1), 8, "v").unwrap();
        assert_ne!(moving.restored, off.restored);
    }

    #[test]
    fn accumulate_mode_carries_weights() {
        let w = tiny();
        let s = sched(3);
        let noise = NoiseModel::default();
        let reset = restore_stream(&stream(9), &w, &s, &noise, &cfg(5e-2), 2, "v").unwrap();
        let carry = restore_stream(&stream(9), &w, &s, &noise, &TTAConfig { accumulate_weights: true, ..cfg(5e-2) }, 2, "v").unwrap();
        // Clips 0 and 1 see identical weights; clip 2 differs once weights carry over.
        assert_eq!(reset.restored.frames.slice(s![..3, .., .., ..]), carry.restored.frames.slice(s![..3, .., .., ..]));
        assert_ne!(reset.restored, carry.restored);
    }
}
