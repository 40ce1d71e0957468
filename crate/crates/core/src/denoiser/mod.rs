//! Conditional noise-prediction network over video clips.
//!
//! The noisy clip and its degraded counterpart are concatenated channel-wise
//! and passed through a 3x3x3 convolution, a per-frame NAFNet-style U-shaped
//! body (two down/up levels with skip connections, every block receiving a
//! time embedding) and a closing 3x3x3 convolution that produces the noise
//! estimate. Only the two 3D layers mix information across frames.

mod net;
pub mod ops;

use ndarray::{Array4, ArrayView4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::VideoClip;
use crate::error::{Error, Result};
use crate::noise::NoiseClip;
use crate::schedule::LatentClip;
use crate::tensor::{Feat, Scalar};
use net::{Arch, Init};

pub use net::Tape;

/// Version tag carried by every weight set.
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub width: usize,
    pub n_blocks: usize,
    pub n_frames: usize,
    pub in_channels: usize,
    pub time_embed_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig { width: 16, n_blocks: 8, n_frames: 5, in_channels: 3, time_embed_dim: 32 }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("width", self.width),
            ("n_blocks", self.n_blocks),
            ("n_frames", self.n_frames),
            ("in_channels", self.in_channels),
            ("time_embed_dim", self.time_embed_dim),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Parameter(format!("denoiser {name} must be positive")));
        }
        if self.n_blocks < 2 {
            return Err(Error::Parameter("denoiser needs at least 2 blocks".into()));
        }
        if !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::Parameter("time_embed_dim must be even".into()));
        }
        Ok(())
    }

    /// Spatial size must be divisible by this.
    pub fn downsample_factor(&self) -> usize {
        1 << net::LEVELS
    }

    /// `(blocks per encoder/decoder level, middle blocks)`.
    pub fn block_layout(&self) -> (usize, usize) {
        let per_level = (self.n_blocks - 1) / (2 * net::LEVELS);
        (per_level, self.n_blocks - 2 * net::LEVELS * per_level)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    /// Parameters of the closing layer, held fixed during test-time adaptation.
    pub last_layer: bool,
}

/// Ordered, named parameter set of one network instance.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<T = f32> {
    pub config: DenoiserConfig,
    pub version: u32,
    pub params: Vec<Param<T>>,
}

/// Gradients laid out parallel to `ModelWeights::params`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T = f32> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn zeros_like(w: &ModelWeights<T>) -> Self {
        Grads { tensors: w.params.iter().map(|p| vec![T::zero(); p.data.len()]).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, s: T) {
        for v in self.tensors.iter_mut().flatten() {
            *v *= s;
        }
    }
}

impl<T: Scalar> ModelWeights<T> {
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        ModelWeights {
            config: self.config,
            version: self.version,
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::from_f64c(v.to_f64().unwrap())).collect(),
                    last_layer: p.last_layer,
                })
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().flat_map(|p| &p.data).all(|v| v.is_finite())
    }

    /// Checks that names, order, shapes and last-layer flags match what the
    /// config's architecture expects.
    pub fn check_layout(&self) -> Result<()> {
        self.config.validate()?;
        let arch = Arch::new(&self.config);
        if arch.specs.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameter tensors, found {}",
                arch.specs.len(),
                self.params.len()
            )));
        }
        for (spec, p) in arch.specs.iter().zip(&self.params) {
            let numel: usize = spec.shape.iter().product();
            if spec.name != p.name || spec.shape != p.shape || p.data.len() != numel || spec.last_layer != p.last_layer {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    p.name, p.shape, spec.name, spec.shape
                )));
            }
        }
        Ok(())
    }

    /// `w <- w - lr * g` on every parameter, skipping the closing layer when
    /// `freeze_last_layer` is set.
    pub fn sgd_update(&mut self, grads: &Grads<T>, lr: T, freeze_last_layer: bool) {
        for (p, g) in self.params.iter_mut().zip(&grads.tensors) {
            if freeze_last_layer && p.last_layer {
                continue;
            }
            for (w, &d) in p.data.iter_mut().zip(g) {
                *w -= lr * d;
            }
        }
    }
}

/// Deterministic initialization: PyTorch-style uniform fan-in bounds for
/// convolutions and projections, unit/zero norms, zero residual scales.
pub fn init_weights(config: &DenoiserConfig, seed: u64) -> Result<ModelWeights<f32>> {
    init_weights_as(config, seed)
}

pub fn init_weights_as<T: Scalar>(config: &DenoiserConfig, seed: u64) -> Result<ModelWeights<T>> {
    config.validate()?;
    let arch = Arch::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = arch
        .specs
        .into_iter()
        .map(|spec| {
            let numel: usize = spec.shape.iter().product();
            let data = (0..numel)
                .map(|_| match spec.init {
                    Init::Uniform(bound) => T::from_f64c(rng.random_range(-bound..bound)),
                    Init::Const(v) => T::from_f64c(v),
                })
                .collect();
            Param { name: spec.name, shape: spec.shape, data, last_layer: spec.last_layer }
        })
        .collect();
    Ok(ModelWeights { config: *config, version: WEIGHTS_VERSION, params })
}

/// Sinusoidal encoding of `t`: `dim / 2` sines followed by `dim / 2` cosines
/// at geometrically spaced frequencies `10000^(-k / (dim/2))`.
pub fn time_embed(t: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Parameter(format!("time embedding dim must be even and positive (got {dim})")));
    }
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half).map(|k| (-(10000f64.ln()) * k as f64 / half as f64).exp()).collect();
    let mut out: Vec<f64> = freqs.iter().map(|f| (t as f64 * f).sin()).collect();
    out.extend(freqs.iter().map(|f| (t as f64 * f).cos()));
    Ok(out)
}

/// `[a || b] -> a * b` elementwise.
pub fn simple_gate(v: &[f64]) -> Result<Vec<f64>> {
    if !v.len().is_multiple_of(2) {
        return Err(Error::Dimension(format!("simple gate needs an even length, got {}", v.len())));
    }
    let (a, b) = v.split_at(v.len() / 2);
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

/// Maps `[0, 1]` pixels to the `[-1, 1]` range the diffusion runs in.
pub fn to_signal(pixels: &Array4<f32>) -> Array4<f32> {
    pixels.mapv(|v| 2.0 * v - 1.0)
}

/// Inverse of [`to_signal`], clamped to `[0, 1]`.
pub fn from_signal(signal: &Array4<f32>) -> Array4<f32> {
    signal.mapv(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
}

/// Recorded forward pass over a batch of clips.
pub struct ForwardTape<T> {
    arch: Arch,
    tape: Tape<T>,
    clip_shape: [usize; 4],
}

fn check_batch<T>(config: &DenoiserConfig, noisy: &[ArrayView4<T>], cond: &[ArrayView4<T>], ts: &[usize]) -> Result<[usize; 4]> {
    if noisy.is_empty() || noisy.len() != cond.len() || noisy.len() != ts.len() {
        return Err(Error::ShapeMismatch(format!(
            "batch sizes differ: noisy {}, condition {}, timesteps {}",
            noisy.len(),
            cond.len(),
            ts.len()
        )));
    }
    let s = noisy[0].shape();
    let shape = [s[0], s[1], s[2], s[3]];
    for (n, c) in noisy.iter().zip(cond) {
        if n.shape() != s || c.shape() != s {
            return Err(Error::ShapeMismatch(format!(
                "clip shapes differ within batch: {:?} / {:?} vs {:?}",
                n.shape(),
                c.shape(),
                s
            )));
        }
    }
    if shape[1] != config.in_channels {
        return Err(Error::ShapeMismatch(format!("expected {} channels, got {}", config.in_channels, shape[1])));
    }
    let f = config.downsample_factor();
    if !shape[2].is_multiple_of(f) || !shape[3].is_multiple_of(f) || shape[2] == 0 || shape[3] == 0 {
        return Err(Error::Dimension(format!(
            "resolution {}x{} must be a positive multiple of {f}",
            shape[2], shape[3]
        )));
    }
    Ok(shape)
}

fn pack_input<T: Scalar>(noisy: &[ArrayView4<T>], cond: &[ArrayView4<T>], shape: [usize; 4]) -> Feat<T> {
    let [f, c, h, w] = shape;
    let mut x = Feat::zeros(noisy.len() * f, h, w, 2 * c);
    for (b, (nv, cv)) in noisy.iter().zip(cond).enumerate() {
        for fi in 0..f {
            let n = b * f + fi;
            for ch in 0..c {
                for yy in 0..h {
                    for xx in 0..w {
                        let o = ((n * h + yy) * w + xx) * 2 * c;
                        x.data[o + ch] = nv[[fi, ch, yy, xx]];
                        x.data[o + c + ch] = cv[[fi, ch, yy, xx]];
                    }
                }
            }
        }
    }
    x
}

fn unpack_output<T: Scalar>(y: &Feat<T>, clips: usize, shape: [usize; 4]) -> Vec<Array4<T>> {
    let [f, c, h, w] = shape;
    (0..clips)
        .map(|b| {
            Array4::from_shape_fn(shape, |(fi, ch, yy, xx)| y.data[(((b * f + fi) * h + yy) * w + xx) * c + ch])
        })
        .collect()
}

fn pack_grad<T: Scalar>(d: &[Array4<T>], shape: [usize; 4]) -> Feat<T> {
    let [f, c, h, w] = shape;
    let mut g = Feat::zeros(d.len() * f, h, w, c);
    for (b, a) in d.iter().enumerate() {
        for ((fi, ch, yy, xx), &v) in a.indexed_iter() {
            g.data[(((b * f + fi) * h + yy) * w + xx) * c + ch] = v;
        }
    }
    g
}

fn time_features<T: Scalar>(ts: &[usize], dim: usize) -> Result<Feat<T>> {
    let mut temb = Feat::zeros(ts.len(), 1, 1, dim);
    for (b, &t) in ts.iter().enumerate() {
        for (k, v) in time_embed(t, dim)?.into_iter().enumerate() {
            temb.data[b * dim + k] = T::from_f64c(v);
        }
    }
    Ok(temb)
}

/// Noise predictions for a batch of clips. `noisy` and `cond` are in signal
/// range, each `[frames, channels, h, w]`; `ts` holds one timestep per clip.
pub fn predict_batch<T: Scalar>(
    weights: &ModelWeights<T>,
    noisy: &[ArrayView4<T>],
    cond: &[ArrayView4<T>],
    ts: &[usize],
) -> Result<Vec<Array4<T>>> {
    Ok(predict_batch_recorded(weights, noisy, cond, ts)?.0)
}

/// As [`predict_batch`], also returning the tape needed by [`backward_batch`].
pub fn predict_batch_recorded<T: Scalar>(
    weights: &ModelWeights<T>,
    noisy: &[ArrayView4<T>],
    cond: &[ArrayView4<T>],
    ts: &[usize],
) -> Result<(Vec<Array4<T>>, ForwardTape<T>)> {
    let shape = check_batch(&weights.config, noisy, cond, ts)?;
    let arch = Arch::new(&weights.config);
    let input = pack_input(noisy, cond, shape);
    let temb = time_features(ts, weights.config.time_embed_dim)?;
    let (y, tape) = arch.forward(weights, &input, temb, shape[0]);
    let out = unpack_output(&y, noisy.len(), shape);
    Ok((out, ForwardTape { arch, tape, clip_shape: shape }))
}

/// Parameter gradients of `sum(d_out * prediction)` for a recorded pass.
pub fn backward_batch<T: Scalar>(weights: &ModelWeights<T>, tape: ForwardTape<T>, d_out: &[Array4<T>]) -> Grads<T> {
    let dy = pack_grad(d_out, tape.clip_shape);
    tape.arch.backward(weights, tape.tape, &dy)
}

/// Predicts the noise in `noisy` (signal range) given the degraded clip
/// (pixel range) at timestep `t`.
pub fn forward(noisy: &LatentClip, condition: &VideoClip, t: usize, weights: &ModelWeights) -> Result<NoiseClip> {
    let cond = to_signal(&condition.frames);
    let mut out = predict_batch(weights, &[noisy.frames.view()], &[cond.view()], &[t])?;
    Ok(NoiseClip { frames: out.pop().unwrap(), arma: None, seed: 0 })
}
