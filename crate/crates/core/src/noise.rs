//! ARMA(1,1)-correlated temporal noise for video clips.
//!
//! A clip's noise is built from two i.i.d. standard-normal sequences, a value
//! sequence and an error sequence, one map per frame. A forward pass mixes
//! each frame with its predecessor, a backward pass then mixes each frame with
//! its (already forward-updated) successor, and every frame is finally
//! standardized on its own. Adjacent frames end up strongly positively
//! correlated while each frame stays marginally standard normal.

use ndarray::{Array4, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients of the temporal noise model: `phi` weights the neighbouring
/// noise value, `tau` the neighbouring error term, and `1 - phi - tau` the
/// frame's own error term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawArma", into = "RawArma")]
pub struct ArmaParams {
    phi: f64,
    tau: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArma {
    phi: f64,
    tau: f64,
}

impl TryFrom<RawArma> for ArmaParams {
    type Error = Error;
    fn try_from(raw: RawArma) -> Result<Self> {
        ArmaParams::new(raw.phi, raw.tau)
    }
}

impl From<ArmaParams> for RawArma {
    fn from(p: ArmaParams) -> Self {
        RawArma { phi: p.phi, tau: p.tau }
    }
}

impl Default for ArmaParams {
    fn default() -> Self {
        ArmaParams { phi: 0.6, tau: 0.3 }
    }
}

impl ArmaParams {
    pub fn new(phi: f64, tau: f64) -> Result<Self> {
        if !(phi.is_finite() && tau.is_finite()) || phi < 0.0 || tau < 0.0 || phi + tau >= 1.0 {
            return Err(Error::Parameter(format!(
                "ARMA coefficients need 0 <= phi, 0 <= tau, phi + tau < 1 (got phi={phi}, tau={tau})"
            )));
        }
        Ok(ArmaParams { phi, tau })
    }

    /// The degenerate model that reduces to i.i.d. noise.
    pub fn independent() -> Self {
        ArmaParams { phi: 0.0, tau: 0.0 }
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    fn own_weight(&self) -> f64 {
        1.0 - self.phi - self.tau
    }
}

/// Per-frame noise maps for one clip, `[n_frames, channels, height, width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseClip {
    pub frames: Array4<f32>,
    /// `None` for i.i.d. noise.
    pub arma: Option<ArmaParams>,
    pub seed: u64,
}

impl NoiseClip {
    pub fn zeros(shape: [usize; 4]) -> Self {
        NoiseClip { frames: Array4::zeros(shape), arma: None, seed: 0 }
    }

    pub fn shape(&self) -> [usize; 4] {
        let s = self.frames.shape();
        [s[0], s[1], s[2], s[3]]
    }
}

/// Which noise distribution drives the diffusion process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNoiseModel", into = "RawNoiseModel")]
pub enum NoiseModel {
    Iid,
    Temporal { arma: ArmaParams },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum NoiseKind {
    Iid,
    Temporal,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoiseModel {
    kind: NoiseKind,
    #[serde(default = "default_phi")]
    phi: f64,
    #[serde(default = "default_tau")]
    tau: f64,
}

fn default_phi() -> f64 {
    ArmaParams::default().phi
}

fn default_tau() -> f64 {
    ArmaParams::default().tau
}

impl TryFrom<RawNoiseModel> for NoiseModel {
    type Error = Error;
    fn try_from(raw: RawNoiseModel) -> Result<Self> {
        Ok(match raw.kind {
            NoiseKind::Iid => NoiseModel::Iid,
            NoiseKind::Temporal => NoiseModel::Temporal { arma: ArmaParams::new(raw.phi, raw.tau)? },
        })
    }
}

impl From<NoiseModel> for RawNoiseModel {
    fn from(m: NoiseModel) -> Self {
        match m {
            NoiseModel::Iid => RawNoiseModel { kind: NoiseKind::Iid, phi: 0.0, tau: 0.0 },
            NoiseModel::Temporal { arma } => {
                RawNoiseModel { kind: NoiseKind::Temporal, phi: arma.phi, tau: arma.tau }
            }
        }
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::Temporal { arma: ArmaParams::default() }
    }
}

impl NoiseModel {
    pub fn sample(&self, shape: [usize; 4], seed: u64) -> Result<NoiseClip> {
        match self {
            NoiseModel::Iid => sample_iid(shape, seed),
            NoiseModel::Temporal { arma } => sample_temporal(shape, *arma, seed),
        }
    }
}

fn check_shape(shape: [usize; 4]) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::Dimension(format!("noise shape {shape:?} must be [N_f, C, H, W] with all dims > 0")));
    }
    Ok(())
}

fn draw_frame(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

/// Independent standard-normal noise, frames drawn in order from one
/// generator seeded with `seed`.
pub fn sample_iid(shape: [usize; 4], seed: u64) -> Result<NoiseClip> {
    check_shape(shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = Array4::from_shape_simple_fn(shape, || rng.sample::<f32, _>(StandardNormal));
    Ok(NoiseClip { frames, arma: None, seed })
}

/// Temporal noise: two sequential one-sided ARMA passes followed by per-frame
/// standardization.
pub fn sample_temporal(shape: [usize; 4], arma: ArmaParams, seed: u64) -> Result<NoiseClip> {
    check_shape(shape)?;
    let n_frames = shape[0];
    let per_frame = shape[1] * shape[2] * shape[3];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // value sequence and error sequence, each frame drawn value-then-error
    let mut value = vec![0.0f64; n_frames * per_frame];
    let mut error = vec![0.0f64; n_frames * per_frame];
    for i in 0..n_frames {
        let r = i * per_frame..(i + 1) * per_frame;
        draw_frame(&mut rng, &mut value[r.clone()]);
        draw_frame(&mut rng, &mut error[r]);
    }

    let a = arma.own_weight();
    let (phi, tau) = (arma.phi, arma.tau);
    let mix = |value: &mut [f64], error: &[f64], i: usize, j: usize| {
        let (dst, src) = (i * per_frame, j * per_frame);
        for e in 0..per_frame {
            value[dst + e] = a * error[dst + e] + phi * value[src + e] + tau * error[src + e];
        }
    };
    for i in 1..n_frames {
        mix(&mut value, &error, i, i - 1);
    }
    for i in (0..n_frames.saturating_sub(1)).rev() {
        mix(&mut value, &error, i, i + 1);
    }

    let frames = Array4::from_shape_vec(shape, value.into_iter().map(|v| v as f32).collect())
        .expect("shape matches buffer");
    normalize_clip(NoiseClip { frames, arma: Some(arma), seed })
}

/// Standardizes every frame independently to zero mean and unit (population)
/// standard deviation over its `C*H*W` elements.
pub fn normalize_clip(mut clip: NoiseClip) -> Result<NoiseClip> {
    if clip.frames.is_empty() {
        return Err(Error::Dimension("cannot normalize an empty clip".into()));
    }
    for (i, mut frame) in clip.frames.axis_iter_mut(Axis(0)).enumerate() {
        let (mean, std) = moments(frame.iter().map(|&v| v as f64));
        if !(std.is_finite() && std > 1e-12 * (1.0 + mean.abs())) {
            return Err(Error::NumericalDegeneracy(format!("frame {i} has zero variance")));
        }
        frame.mapv_inplace(|v| ((v as f64 - mean) / std) as f32);
    }
    Ok(clip)
}

/// Mean and population standard deviation, two-pass in `f64`.
pub(crate) fn moments(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.clone() {
        sum += v;
        n += 1;
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Pearson correlation of two equally sized sample vectors.
pub fn pearson(a: ArrayView1<'_, f32>, b: ArrayView1<'_, f32>) -> f64 {
    let (ma, sa) = moments(a.iter().map(|&v| v as f64));
    let (mb, sb) = moments(b.iter().map(|&v| v as f64));
    let cov = a.iter().zip(b.iter()).map(|(&x, &y)| (x as f64 - ma) * (y as f64 - mb)).sum::<f64>()
        / a.len() as f64;
    cov / (sa * sb)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationStats {
    /// Mean over `i` of the Pearson correlation between flattened frames `i` and `i+1`.
    pub rho_adjacent: f64,
    pub per_frame_mean: Vec<f64>,
    pub per_frame_std: Vec<f64>,
}

pub fn correlation_stats(clip: &NoiseClip) -> Result<CorrelationStats> {
    let n = clip.frames.shape()[0];
    if n < 2 {
        return Err(Error::InsufficientFrames { needed: 2, got: n });
    }
    let flat: Vec<Vec<f32>> = clip.frames.axis_iter(Axis(0)).map(|f| f.iter().copied().collect()).collect();
    let (per_frame_mean, per_frame_std) =
        flat.iter().map(|f| moments(f.iter().map(|&v| v as f64))).unzip();
    let rho_adjacent = flat
        .windows(2)
        .map(|w| pearson(ArrayView1::from(&w[0]), ArrayView1::from(&w[1])))
        .sum::<f64>()
        / (n - 1) as f64;
    Ok(CorrelationStats { rho_adjacent, per_frame_mean, per_frame_std })
}
