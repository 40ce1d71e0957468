//! Synthetic video corpus: procedural clean scenes, parametric weather
//! degradations, clip slicing and PNG/manifest storage.

mod corpus;
mod io;
mod scene;
mod weather;

use ndarray::{s, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use corpus::{generate_corpus, replay_entry, CorpusConfig, IntensityRange};
pub use io::{load_frames, load_manifest, save_frames, save_manifest, Manifest, ManifestEntry, Role, Split};
pub use scene::gen_clean_video;
pub use weather::{apply_combo, apply_haze, apply_rain, apply_snow, degrade, haze_with_transmission};

/// `N_f` consecutive frames `[N_f, C, H, W]` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub frames: Array4<f32>,
    pub clip_index: usize,
    pub video_id: String,
}

impl VideoClip {
    /// Values are clamped into `[0, 1]`.
    pub fn new(mut frames: Array4<f32>, clip_index: usize, video_id: String) -> Self {
        frames.mapv_inplace(|v| v.clamp(0.0, 1.0));
        VideoClip { frames, clip_index, video_id }
    }

    pub fn n_frames(&self) -> usize {
        self.frames.shape()[0]
    }
}

/// All frames of one video, `[N, C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub frames: Array4<f32>,
    /// Informational only.
    pub fps: f32,
}

impl FrameSequence {
    pub fn new(frames: Array4<f32>) -> Self {
        FrameSequence { frames, fps: 10.0 }
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }

    pub fn clip(&self, start: usize, n: usize) -> Array4<f32> {
        self.frames.slice(s![start..start + n, .., .., ..]).to_owned()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationKind {
    Rain,
    Haze,
    Snow,
    RainRaindrop,
    SnowFog,
}

impl DegradationKind {
    pub const SEEN: [DegradationKind; 3] = [DegradationKind::Rain, DegradationKind::Haze, DegradationKind::Snow];
    pub const UNSEEN: [DegradationKind; 2] = [DegradationKind::RainRaindrop, DegradationKind::SnowFog];

    pub fn is_seen(self) -> bool {
        Self::SEEN.contains(&self)
    }

    pub fn name(self) -> &'static str {
        match self {
            DegradationKind::Rain => "rain",
            DegradationKind::Haze => "haze",
            DegradationKind::Snow => "snow",
            DegradationKind::RainRaindrop => "rain_raindrop",
            DegradationKind::SnowFog => "snow_fog",
        }
    }
}

impl std::fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-frame drift of falling particles, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Motion {
    pub dx: f64,
    pub dy: f64,
}

impl Motion {
    pub const STILL: Motion = Motion { dx: 0.0, dy: 0.0 };
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub intensity: f64,
    pub motion: Motion,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn new(kind: DegradationKind, intensity: f64, motion: Motion, seed: u64) -> Result<Self> {
        let spec = DegradationSpec { kind, intensity, motion, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.intensity) {
            return Err(Error::Parameter(format!("intensity {} outside [0, 1]", self.intensity)));
        }
        if !(self.motion.dx.is_finite() && self.motion.dy.is_finite()) {
            return Err(Error::Parameter("motion must be finite".into()));
        }
        Ok(())
    }

    fn expect(&self, kinds: &[DegradationKind]) -> Result<()> {
        if kinds.contains(&self.kind) {
            return self.validate();
        }
        let expected = kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join("|");
        Err(Error::KindMismatch { expected, got: self.kind.name().into() })
    }
}

/// Clip start offsets: multiples of `stride`, plus a final clip anchored to
/// end at the last frame when the regular grid leaves frames uncovered.
pub fn clip_starts(len: usize, n_f: usize, stride: usize) -> Result<Vec<usize>> {
    if n_f == 0 || stride == 0 || stride > n_f {
        return Err(Error::Parameter(format!("need 1 <= stride <= n_f, n_f >= 1 (got n_f={n_f}, stride={stride})")));
    }
    if len < n_f {
        return Err(Error::InsufficientFrames { needed: n_f, got: len });
    }
    let mut starts: Vec<usize> = (0..).map(|k| k * stride).take_while(|&s| s + n_f <= len).collect();
    let last = len - n_f;
    if *starts.last().unwrap() != last {
        starts.push(last);
    }
    Ok(starts)
}

pub fn slice_clips(seq: &FrameSequence, n_f: usize, stride: usize, video_id: &str) -> Result<Vec<VideoClip>> {
    Ok(clip_starts(seq.len(), n_f, stride)?
        .into_iter()
        .enumerate()
        .map(|(k, start)| VideoClip::new(seq.clip(start, n_f), k, video_id.to_string()))
        .collect())
}
