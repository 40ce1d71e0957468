//! Source-domain training of the noise predictor: mean-L1 noise regression
//! under the temporal noise model, Lion updates on a cosine schedule.

mod checkpoint;

use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array4, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{load_frames, FrameSequence, Manifest, Role, Split, VideoClip};
use crate::denoiser::{backward_batch, predict_batch, predict_batch_recorded, to_signal, Grads, ModelWeights};
use crate::error::{Error, Result};
use crate::noise::{NoiseClip, NoiseModel};
use crate::schedule::{q_sample, DiffusionSchedule};
use crate::seed;
use crate::tensor::Scalar;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Lion,
    /// Momentum-free sign descent, for debugging.
    SignSgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub total_iters: usize,
    pub batch_clips: usize,
    pub frames_per_clip: usize,
    pub crop_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub lion_beta1: f64,
    pub lion_beta2: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    /// Noise used both to corrupt clean clips and as the regression target.
    pub noise: NoiseModel,
    /// Write a checkpoint every this many iterations (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_iters: 2000,
            batch_clips: 4,
            frames_per_clip: 5,
            crop_size: 32,
            lr_start: 5e-4,
            lr_end: 5e-6,
            lion_beta1: 0.9,
            lion_beta2: 0.99,
            weight_decay: 0.01,
            optimizer: OptimizerKind::Lion,
            noise: NoiseModel::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Parameter(format!("train.{m}")));
        if self.batch_clips == 0 || self.frames_per_clip == 0 || self.crop_size == 0 {
            return err("batch_clips, frames_per_clip and crop_size must be positive".into());
        }
        if !(self.lr_start >= self.lr_end && self.lr_end > 0.0 && self.lr_start.is_finite()) {
            return err(format!("needs lr_start >= lr_end > 0 (got {} / {})", self.lr_start, self.lr_end));
        }
        for (name, b) in [("lion_beta1", self.lion_beta1), ("lion_beta2", self.lion_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return err(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return err(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        Ok(())
    }
}

/// Per-parameter first-moment buffers plus the number of completed steps.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T = f32> {
    pub momenta: Vec<Vec<T>>,
    pub step: usize,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(weights: &ModelWeights<T>) -> Self {
        OptimizerState { momenta: weights.params.iter().map(|p| vec![T::zero(); p.data.len()]).collect(), step: 0 }
    }
}

/// `0` maps to `0`, unlike `f32::signum`.
fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// One Lion (or sign-descent) update:
/// `u = sign(b1 m + (1 - b1) g)`, `w -= lr (u + wd w)`, `m = b2 m + (1 - b2) g`.
pub fn lion_step<T: Scalar>(
    weights: &mut ModelWeights<T>,
    grads: &Grads<T>,
    state: &mut OptimizerState<T>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::TrainingFault(format!("non-finite gradient at step {}", state.step)));
    }
    if grads.tensors.len() != weights.params.len() || state.momenta.len() != weights.params.len() {
        return Err(Error::ShapeMismatch("gradient/optimizer state do not mirror the parameters".into()));
    }
    let (lr, wd) = (T::from_f64c(lr), T::from_f64c(cfg.weight_decay));
    let (b1, b2) = (T::from_f64c(cfg.lion_beta1), T::from_f64c(cfg.lion_beta2));
    for ((p, g), m) in weights.params.iter_mut().zip(&grads.tensors).zip(&mut state.momenta) {
        if g.len() != p.data.len() || m.len() != p.data.len() {
            return Err(Error::ShapeMismatch(format!("gradient for {} has the wrong length", p.name)));
        }
        for ((w, &g), m) in p.data.iter_mut().zip(g).zip(m.iter_mut()) {
            let u = match cfg.optimizer {
                OptimizerKind::Lion => sign(b1 * *m + (T::one() - b1) * g),
                OptimizerKind::SignSgd => sign(g),
            };
            *w -= lr * (u + wd * *w);
            if cfg.optimizer == OptimizerKind::Lion {
                *m = b2 * *m + (T::one() - b2) * g;
            }
        }
    }
    state.step += 1;
    Ok(())
}

/// `lr_end + (lr_start - lr_end) (1 + cos(pi iter / total)) / 2`.
pub fn cosine_lr(iter: usize, cfg: &TrainConfig) -> Result<f64> {
    if iter > cfg.total_iters {
        return Err(Error::Parameter(format!("iteration {iter} beyond total_iters {}", cfg.total_iters)));
    }
    if cfg.total_iters == 0 {
        return Ok(cfg.lr_start);
    }
    let c = (std::f64::consts::PI * iter as f64 / cfg.total_iters as f64).cos();
    Ok(cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + c))
}

/// One regression example, in signal range.
#[derive(Clone, Debug)]
pub struct LossItem<T> {
    pub x0: Array4<T>,
    pub cond: Array4<T>,
    pub t: usize,
    pub eps: Array4<T>,
}

impl LossItem<f32> {
    /// From `[0, 1]` clean/degraded clips.
    pub fn from_clips(clean: &VideoClip, degraded: &VideoClip, t: usize, eps: &NoiseClip) -> Result<Self> {
        if clean.frames.shape() != degraded.frames.shape() || clean.frames.shape() != eps.frames.shape() {
            return Err(Error::ShapeMismatch(format!(
                "clean {:?}, degraded {:?}, noise {:?}",
                clean.frames.shape(),
                degraded.frames.shape(),
                eps.frames.shape()
            )));
        }
        Ok(LossItem { x0: to_signal(&clean.frames), cond: to_signal(&degraded.frames), t, eps: eps.frames.clone() })
    }
}

fn noised<T: Scalar>(item: &LossItem<T>, sched: &DiffusionSchedule) -> Result<Array4<T>> {
    sched.check_t(item.t)?;
    if item.x0.shape() != item.eps.shape() || item.x0.shape() != item.cond.shape() {
        return Err(Error::ShapeMismatch("loss item tensors differ in shape".into()));
    }
    let ab = sched.alpha_bar(item.t);
    let (a, b) = (T::from_f64c(ab.sqrt()), T::from_f64c((1.0 - ab).sqrt()));
    Ok(Zip::from(&item.x0).and(&item.eps).map_collect(|&x, &e| a * x + b * e))
}

fn l1_mean<T: Scalar>(pred: &[Array4<T>], items: &[LossItem<T>]) -> f64 {
    let n: usize = items.iter().map(|i| i.eps.len()).sum();
    let total: f64 = pred
        .iter()
        .zip(items)
        .map(|(p, it)| Zip::from(p).and(&it.eps).fold(0.0f64, |s, &p, &e| s + (p - e).abs().to_f64().unwrap()))
        .sum();
    total / n as f64
}

/// Mean absolute error between the target noise and the prediction on the
/// noised clean clip, over all elements of all items.
pub fn batch_loss<T: Scalar>(weights: &ModelWeights<T>, items: &[LossItem<T>], sched: &DiffusionSchedule) -> Result<f64> {
    let noisy = items.iter().map(|i| noised(i, sched)).collect::<Result<Vec<_>>>()?;
    let nv: Vec<_> = noisy.iter().map(|a| a.view()).collect();
    let cv: Vec<_> = items.iter().map(|i| i.cond.view()).collect();
    let ts: Vec<usize> = items.iter().map(|i| i.t).collect();
    let pred = predict_batch(weights, &nv, &cv, &ts)?;
    Ok(l1_mean(&pred, items))
}

/// [`batch_loss`] together with its parameter gradient.
pub fn batch_loss_and_grads<T: Scalar>(
    weights: &ModelWeights<T>,
    items: &[LossItem<T>],
    sched: &DiffusionSchedule,
) -> Result<(f64, Grads<T>)> {
    let noisy = items.iter().map(|i| noised(i, sched)).collect::<Result<Vec<_>>>()?;
    let nv: Vec<_> = noisy.iter().map(|a| a.view()).collect();
    let cv: Vec<_> = items.iter().map(|i| i.cond.view()).collect();
    let ts: Vec<usize> = items.iter().map(|i| i.t).collect();
    let (pred, tape) = predict_batch_recorded(weights, &nv, &cv, &ts)?;
    let loss = l1_mean(&pred, items);
    let n: usize = items.iter().map(|i| i.eps.len()).sum();
    let inv_n = T::from_f64c(1.0 / n as f64);
    let d_out: Vec<Array4<T>> =
        pred.iter().zip(items).map(|(p, it)| Zip::from(p).and(&it.eps).map_collect(|&p, &e| sign(p - e) * inv_n)).collect();
    Ok((loss, backward_batch(weights, tape, &d_out)))
}

/// Mean-L1 noise-regression loss of one clip pair at timestep `t`.
pub fn loss_ls(
    weights: &ModelWeights,
    clean: &VideoClip,
    degraded: &VideoClip,
    t: usize,
    eps_bar: &NoiseClip,
    sched: &DiffusionSchedule,
) -> Result<f64> {
    let item = LossItem::from_clips(clean, degraded, t, eps_bar)?;
    // Keep the single-clip path on the same arithmetic as `q_sample`.
    let noisy = q_sample(&item.x0, t, eps_bar, sched)?;
    let pred = predict_batch(weights, &[noisy.frames.view()], &[item.cond.view()], &[t])?;
    Ok(l1_mean(&pred, std::slice::from_ref(&item)))
}

/// Aligned clean/degraded videos to draw training crops from.
#[derive(Clone, Debug)]
pub struct TrainSet {
    pub videos: Vec<(String, FrameSequence, FrameSequence)>,
}

impl TrainSet {
    /// Loads every training-split video listed in the manifest.
    pub fn from_corpus(root: &Path, manifest: &Manifest) -> Result<Self> {
        let mut videos = Vec::new();
        for deg in manifest.degraded(Some(Split::Train)) {
            let clean_entry = manifest
                .find(&deg.video_id, Role::Clean)
                .ok_or_else(|| Error::MalformedManifest(format!("{} has no clean entry", deg.video_id)))?;
            let clean = load_frames(&Manifest::frame_dir(root, clean_entry))?;
            let degraded = load_frames(&Manifest::frame_dir(root, deg))?;
            videos.push((deg.video_id.clone(), clean, degraded));
        }
        Self::new(videos)
    }

    pub fn new(videos: Vec<(String, FrameSequence, FrameSequence)>) -> Result<Self> {
        if videos.is_empty() {
            return Err(Error::MalformedManifest("no training videos".into()));
        }
        for (id, c, d) in &videos {
            if c.frames.shape() != d.frames.shape() {
                return Err(Error::ShapeMismatch(format!("{id}: clean {:?} vs degraded {:?}", c.frames.shape(), d.frames.shape())));
            }
        }
        Ok(TrainSet { videos })
    }

    /// Random aligned crops for iteration `iter`, keyed so that the draw does
    /// not depend on anything but `(seed, iter, clip index)`.
    pub fn sample_batch(&self, cfg: &TrainConfig, iter: usize, base_seed: u64) -> Result<Vec<(VideoClip, VideoClip)>> {
        (0..cfg.batch_clips)
            .map(|b| {
                let mut rng = seed::rng(base_seed, &[seed::tag::TRAIN_BATCH, iter as u64, b as u64]);
                let (id, clean, degraded) = &self.videos[rng.random_range(0..self.videos.len())];
                let (n, h, w) = (clean.len(), clean.height(), clean.width());
                if n < cfg.frames_per_clip {
                    return Err(Error::InsufficientFrames { needed: cfg.frames_per_clip, got: n });
                }
                if cfg.crop_size > h || cfg.crop_size > w {
                    return Err(Error::Parameter(format!("crop {} exceeds {h}x{w} frames", cfg.crop_size)));
                }
                let f0 = rng.random_range(0..=n - cfg.frames_per_clip);
                let y0 = rng.random_range(0..=h - cfg.crop_size);
                let x0 = rng.random_range(0..=w - cfg.crop_size);
                let window = s![f0..f0 + cfg.frames_per_clip, .., y0..y0 + cfg.crop_size, x0..x0 + cfg.crop_size];
                Ok((
                    VideoClip::new(clean.frames.slice(window).to_owned(), b, id.clone()),
                    VideoClip::new(degraded.frames.slice(window).to_owned(), b, id.clone()),
                ))
            })
            .collect()
    }
}

/// Timestep and noise for clip `b` of iteration `iter`.
fn draw_target(cfg: &TrainConfig, sched: &DiffusionSchedule, shape: [usize; 4], iter: usize, b: usize, base_seed: u64) -> Result<(usize, NoiseClip)> {
    let mut rng = seed::rng(base_seed, &[seed::tag::TIMESTEP, iter as u64, b as u64]);
    let t = rng.random_range(1..=sched.timesteps());
    let eps = cfg.noise.sample(shape, seed::derive(base_seed, &[seed::tag::TRAIN_NOISE, iter as u64, b as u64]))?;
    Ok((t, eps))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub iter: usize,
    pub timestep: Vec<usize>,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

/// Draws timesteps and noise for the batch, takes one optimizer step at the
/// cosine rate for `state.step`, and returns the pre-update loss.
pub fn train_step(
    weights: &mut ModelWeights,
    state: &mut OptimizerState,
    batch: &[(VideoClip, VideoClip)],
    sched: &DiffusionSchedule,
    cfg: &TrainConfig,
    base_seed: u64,
) -> Result<StepRecord> {
    if batch.is_empty() {
        return Err(Error::Parameter("empty training batch".into()));
    }
    let start = Instant::now();
    let iter = state.step;
    let mut items = Vec::with_capacity(batch.len());
    let mut timestep = Vec::with_capacity(batch.len());
    for (b, (clean, degraded)) in batch.iter().enumerate() {
        let shape = clean.frames.shape();
        let (t, eps) = draw_target(cfg, sched, [shape[0], shape[1], shape[2], shape[3]], iter, b, base_seed)?;
        timestep.push(t);
        items.push(LossItem::from_clips(clean, degraded, t, &eps)?);
    }
    let (loss, grads) = batch_loss_and_grads(weights, &items, sched)?;
    if !loss.is_finite() {
        return Err(Error::TrainingFault(format!("loss is {loss} at iteration {iter}")));
    }
    let lr = cosine_lr(iter, cfg)?;
    lion_step(weights, &grads, state, lr, cfg)?;
    Ok(StepRecord { iter, timestep, loss, lr, wall_ms: start.elapsed().as_secs_f64() * 1e3 })
}

/// Runs from `state.step` up to `cfg.total_iters`. `on_step` sees every
/// record and may request a checkpoint by returning `Ok(())`; errors abort.
pub fn train_loop(
    weights: &mut ModelWeights,
    state: &mut OptimizerState,
    set: &TrainSet,
    sched: &DiffusionSchedule,
    cfg: &TrainConfig,
    base_seed: u64,
    mut on_step: impl FnMut(&StepRecord, &ModelWeights, &OptimizerState) -> Result<()>,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut losses = Vec::new();
    while state.step < cfg.total_iters {
        let batch = set.sample_batch(cfg, state.step, base_seed)?;
        let rec = train_step(weights, state, &batch, sched, cfg, base_seed)?;
        losses.push(rec.loss);
        on_step(&rec, weights, state)?;
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_clean_video;
    use crate::denoiser::{init_weights, init_weights_as, DenoiserConfig};
    use crate::noise::{sample_iid, sample_temporal, ArmaParams};
    use crate::schedule::ScheduleConfig;
    use ndarray::Array4;

    fn scalar_weights(v: f32) -> ModelWeights {
        let mut w = init_weights(&DenoiserConfig { width: 4, n_blocks: 2, time_embed_dim: 8, ..Default::default() }, 0).unwrap();
        w.params.truncate(1);
        w.params[0].data = vec![v];
        w.params[0].shape = vec![1];
        w
    }

    fn cfg() -> TrainConfig {
        TrainConfig { weight_decay: 0.0, ..Default::default() }
    }

    #[test]
    fn lion_single_scalar_steps() {
        let mut w = scalar_weights(1.0);
        let mut st = OptimizerState::new(&w);
        lion_step(&mut w, &Grads { tensors: vec![vec![0.5]] }, &mut st, 0.1, &cfg()).unwrap();
        assert_eq!(w.params[0].data[0], 0.9);
        let mut w = scalar_weights(1.0);
        let mut st = OptimizerState::new(&w);
        lion_step(&mut w, &Grads { tensors: vec![vec![0.0]] }, &mut st, 0.1, &cfg()).unwrap();
        assert_eq!(w.params[0].data[0], 1.0);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn lion_two_step_trajectory() {
        // Independent scalar recurrence in f64.
        let (b1, b2, lr, wd) = (0.9, 0.99, 0.01, 0.1);
        let gs = [2.0, -30.0];
        let (mut w, mut m) = (0.5f64, 0.0f64);
        for g in gs {
            let c: f64 = b1 * m + (1.0 - b1) * g;
            w -= lr * (c.signum() + wd * w);
            m = b2 * m + (1.0 - b2) * g;
        }
        let c = TrainConfig { weight_decay: wd, lr_start: lr, lr_end: lr, ..Default::default() };
        let mut wt = scalar_weights(0.5).cast::<f64>();
        let mut st = OptimizerState::new(&wt);
        for g in gs {
            lion_step(&mut wt, &Grads { tensors: vec![vec![g]] }, &mut st, lr, &c).unwrap();
        }
        assert!((wt.params[0].data[0] - w).abs() < 1e-15);
        // 0.5 -> 0.4895 -> 0.4990105: the direction flips on the second step.
        assert!((w - 0.4990105).abs() < 1e-12, "{w}");
        assert!((st.momenta[0][0] - (0.99 * 0.02 - 0.3)).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_is_a_training_fault() {
        let mut w = scalar_weights(1.0);
        let mut st = OptimizerState::new(&w);
        let r = lion_step(&mut w, &Grads { tensors: vec![vec![f32::NAN]] }, &mut st, 0.1, &cfg());
        assert!(matches!(r, Err(Error::TrainingFault(_))));
        assert_eq!(w.params[0].data[0], 1.0);
    }

    #[test]
    fn cosine_endpoints() {
        let c = TrainConfig { total_iters: 100, lr_start: 2e-5, lr_end: 2e-7, ..Default::default() };
        assert_eq!(cosine_lr(0, &c).unwrap(), 2e-5);
        assert!((cosine_lr(100, &c).unwrap() - 2e-7).abs() < 1e-20);
        assert!((cosine_lr(50, &c).unwrap() - (2e-5 + 2e-7) / 2.0).abs() < 1e-18);
        assert!(cosine_lr(101, &c).is_err());
        for i in 0..100 {
            assert!(cosine_lr(i + 1, &c).unwrap() <= cosine_lr(i, &c).unwrap());
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lr_end: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_clips: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr_end: 0.0, lr_start: 0.0, ..Default::default() }.validate().is_err());
    }

    fn tiny64() -> ModelWeights<f64> {
        use rand::SeedableRng;
        let mut w = init_weights_as::<f64>(&DenoiserConfig { width: 4, n_blocks: 2, time_embed_dim: 8, ..Default::default() }, 9).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for p in &mut w.params {
            // Residual scales start at zero; open them up so every branch matters.
            let spread = if p.name.ends_with("beta") || p.name.ends_with("gamma") { 1.0 } else { 0.2 };
            for v in &mut p.data {
                *v += rng.random_range(-spread..spread);
            }
        }
        w
    }

    fn item64(seed: u64, t: usize) -> LossItem<f64> {
        let g = |s| sample_iid([5, 3, 8, 8], s).unwrap().frames.mapv(|v| v as f64);
        LossItem { x0: g(seed).mapv(|v| (v * 0.3).tanh()), cond: g(seed + 1).mapv(|v| (v * 0.3).tanh()), t, eps: g(seed + 2) }
    }

    /// Central difference at the largest step whose estimate agrees with the
    /// half step (so no L1 kink lies in between), Richardson-extrapolated.
    fn fd_probe(eval: impl Fn(f64) -> f64) -> Option<f64> {
        let central = |h: f64| (eval(h) - eval(-h)) / (2.0 * h);
        [1e-3, 1e-4, 1e-5].into_iter().find_map(|h| {
            let (a, b) = (central(h), central(h / 2.0));
            ((a - b).abs() <= 1e-4 * a.abs().max(b.abs()) + 1e-12).then(|| (4.0 * b - a) / 3.0)
        })
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let sched = ScheduleConfig::default().build().unwrap();
        let w = tiny64();
        let items = vec![item64(10, 300)];
        let (_, g) = batch_loss_and_grads(&w, &items, &sched).unwrap();
        let mut worst = 0.0f64;
        let mut checked = 0;
        for (pi, p) in w.params.iter().enumerate() {
            let n = p.data.len();
            for &i in &[0, n / 4, n / 2, 3 * n / 4, n - 1] {
                let eval = |d: f64| {
                    let mut wp = w.clone();
                    wp.params[pi].data[i] += d;
                    batch_loss(&wp, &items, &sched).unwrap()
                };
                let Some(fd) = fd_probe(eval) else { continue };
                let an = g.tensors[pi][i];
                checked += 1;
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-12);
                assert!(rel < 1e-3, "{}[{i}]: fd {fd:e} vs analytic {an:e}", p.name);
                worst = worst.max(rel);
            }
        }
        assert!(checked >= 100, "{checked}");
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn loss_of_perfect_and_offset_predictions() {
        // Zero residual scales and zero closing layer make the network output
        // exactly zero, so choosing eps = 0 or eps = -1 pins the loss.
        let mut w = init_weights(&DenoiserConfig { width: 4, n_blocks: 2, time_embed_dim: 8, ..Default::default() }, 1).unwrap();
        for p in w.params.iter_mut().filter(|p| p.last_layer) {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let sched = ScheduleConfig::default().build().unwrap();
        let clip = VideoClip::new(Array4::from_elem([5, 3, 8, 8], 0.3), 0, "v".into());
        let zero = NoiseClip::zeros([5, 3, 8, 8]);
        assert_eq!(loss_ls(&w, &clip, &clip, 10, &zero, &sched).unwrap(), 0.0);
        let minus_one = NoiseClip { frames: Array4::from_elem([5, 3, 8, 8], -1.0), ..zero.clone() };
        assert_eq!(loss_ls(&w, &clip, &clip, 10, &minus_one, &sched).unwrap(), 1.0);
        let bad = NoiseClip::zeros([5, 3, 8, 16]);
        assert!(matches!(loss_ls(&w, &clip, &clip, 10, &bad, &sched), Err(Error::ShapeMismatch(_))));
    }

    fn toy_set() -> TrainSet {
        let videos = (0..2)
            .map(|i| {
                let clean = gen_clean_video(8, 16, i).unwrap();
                let spec = crate::data::DegradationSpec::new(crate::data::DegradationKind::Rain, 0.6, crate::data::Motion { dx: 0.5, dy: 4.0 }, i).unwrap();
                let deg = crate::data::degrade(&clean, &spec).unwrap();
                (format!("v{i}"), clean, deg)
            })
            .collect();
        TrainSet::new(videos).unwrap()
    }

    #[test]
    fn training_is_deterministic_and_starts_positive() {
        let set = toy_set();
        let sched = ScheduleConfig::default().build().unwrap();
        let cfg = TrainConfig { total_iters: 3, batch_clips: 2, crop_size: 8, ..Default::default() };
        let dcfg = DenoiserConfig { width: 4, n_blocks: 2, time_embed_dim: 8, ..Default::default() };
        let run = || {
            let mut w = init_weights(&dcfg, 3).unwrap();
            let mut st = OptimizerState::new(&w);
            let losses = train_loop(&mut w, &mut st, &set, &sched, &cfg, 17, |_, _, _| Ok(())).unwrap();
            (losses, w, st)
        };
        let (l1, w1, s1) = run();
        let (l2, w2, s2) = run();
        assert_eq!(l1, l2);
        assert_eq!(w1, w2);
        assert_eq!(s1, s2);
        assert_eq!(s1.step, 3);
        assert!(l1[0].is_finite() && l1[0] > 0.0);
    }

    #[test]
    fn batch_draws_are_keyed() {
        let set = toy_set();
        let cfg = TrainConfig { batch_clips: 3, crop_size: 8, ..Default::default() };
        let a = set.sample_batch(&cfg, 5, 1).unwrap();
        let b = set.sample_batch(&TrainConfig { batch_clips: 2, ..cfg.clone() }, 5, 1).unwrap();
        assert_eq!(a[..2], b[..]);
        assert_ne!(a, set.sample_batch(&cfg, 6, 1).unwrap());
    }

    #[test]
    fn temporal_target_noise_is_used() {
        let c = TrainConfig::default();
        let sched = ScheduleConfig::default().build().unwrap();
        let (_, eps) = draw_target(&c, &sched, [5, 1, 4, 4], 0, 0, 3).unwrap();
        let direct = sample_temporal([5, 1, 4, 4], ArmaParams::default(), seed::derive(3, &[seed::tag::TRAIN_NOISE, 0, 0])).unwrap();
        assert_eq!(eps.frames, direct.frames);
    }
}
